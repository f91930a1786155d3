mod common;

use common::{golden, load_dataset, rel_close};
use psiv::report::{analyze, fmt_sig, stratum_report, SeMode, DEFAULT_METHODS};
use psiv_core::{EstimatorConfig, Method};
use serde_json::Value;

const TOL: f64 = 1e-9;

fn check_estimates(stem: &str) {
    let g = golden();
    let expected = &g[format!("{stem}_like")]["estimates"];
    let sample = load_dataset(stem);
    let table = analyze(&sample, &DEFAULT_METHODS, &EstimatorConfig::default(), SeMode::Both);
    for row in &table.rows {
        let e = &expected[row.method.tag()];
        assert!(e.is_object(), "{stem}: no golden row for {}", row.method);
        let est = row.estimate.unwrap();
        assert!(
            rel_close(est, e["estimate"].as_f64().unwrap(), TOL),
            "{stem} {}: estimate {est}",
            row.method
        );
        let se_key = if row.method == Method::TslsDummies {
            "se"
        } else {
            "se_bloom"
        };
        let se = row.se_bloom.unwrap();
        assert!(
            rel_close(se, e[se_key].as_f64().unwrap(), TOL),
            "{stem} {}: se {se}",
            row.method
        );
        if let Some(d) = e.get("se_delta").and_then(Value::as_f64) {
            assert!(rel_close(row.se_delta.unwrap(), d, TOL), "{stem} {}: delta", row.method);
        }
        if let Some(f) = e.get("f_hat").and_then(Value::as_f64) {
            assert!(rel_close(row.pi_c_hat.unwrap(), f, TOL), "{stem} {}: f", row.method);
        }
        if let Some(n) = e.get("n").and_then(Value::as_u64) {
            assert_eq!(row.n.unwrap() as u64, n, "{stem} {}: n", row.method);
        }
    }
}

fn check_strata(stem: &str) {
    let g = golden();
    let expected = g[format!("{stem}_like")]["strata"].as_object().unwrap().clone();
    let rows = stratum_report(&load_dataset(stem));
    assert_eq!(rows.len(), expected.len());
    for r in rows {
        let e = &expected[&r.stratum];
        assert_eq!(r.n as u64, e["n"].as_u64().unwrap(), "{}", r.stratum);
        assert!(rel_close(r.pi_c_hat, e["pi_c_hat"].as_f64().unwrap(), TOL));
        assert!(rel_close(r.cace.unwrap(), e["cace"].as_f64().unwrap(), TOL));
        assert!(rel_close(r.se_bloom.unwrap(), e["se_bloom"].as_f64().unwrap(), TOL));
    }
}

#[test]
fn spotlight_like_estimates_match_golden() {
    check_estimates("spotlight");
}

#[test]
fn gotv_like_estimates_match_golden() {
    check_estimates("gotv");
}

#[test]
fn spotlight_like_strata_match_golden() {
    check_strata("spotlight");
}

#[test]
fn gotv_like_strata_match_golden() {
    check_strata("gotv");
}

#[test]
fn spotlight_like_drop_small_strata_keeps_three_groups() {
    let sample = load_dataset("spotlight");
    let table = analyze(
        &sample,
        &[Method::DropSmallStrata],
        &EstimatorConfig::default(),
        SeMode::Bloom,
    );
    assert_eq!(table.rows[0].n, Some(11_651));
    let pis: Vec<String> = stratum_report(&sample)
        .iter()
        .map(|r| format!("{:.3}", r.pi_c_hat))
        .collect();
    assert_eq!(pis, ["0.091", "0.026", "0.172", "0.019"]);
}

#[test]
fn gotv_like_has_binned_and_missing_strata() {
    let sample = load_dataset("gotv");
    assert_eq!(sample.num_strata(), 13);
    assert_eq!(sample.labels().last().map(String::as_str), Some("missing"));
    assert!(sample.labels().iter().any(|l| l == "q4|north"));
}

#[test]
fn table_text_is_stable() {
    let sample = load_dataset("spotlight");
    let a = analyze(&sample, &DEFAULT_METHODS, &EstimatorConfig::default(), SeMode::Bloom).to_csv();
    let b = analyze(&sample, &DEFAULT_METHODS, &EstimatorConfig::default(), SeMode::Bloom).to_csv();
    assert_eq!(a, b);
    let g = golden();
    let e = g["spotlight_like"]["estimates"]["DSS"]["estimate"].as_f64().unwrap();
    assert!(a.contains(&format!(
        "DSS,{}",
        fmt_sig(g["spotlight_like"]["estimates"]["DSS"]["f_hat"].as_f64().unwrap(), 4)
    )));
    assert!(a.contains(&fmt_sig(e, 4)));
}
