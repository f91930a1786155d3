#![allow(dead_code)]

use std::path::PathBuf;

use psiv::io::{load_csv, DatasetSchema};
use psiv_core::ObservedSample;
use serde_json::Value;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("data")
        .join(name)
}

pub fn load_dataset(stem: &str) -> ObservedSample {
    let schema = DatasetSchema::load(&data_path(&format!("{stem}_schema.json"))).unwrap();
    load_csv(&data_path(&format!("{stem}_like.csv")), &schema).unwrap()
}

pub fn golden() -> Value {
    serde_json::from_str(&std::fs::read_to_string(data_path("golden.json")).unwrap()).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}

/// Runs the CLI in-process and returns (exit code, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("psiv").chain(args.iter().copied());
    let code = psiv::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}
