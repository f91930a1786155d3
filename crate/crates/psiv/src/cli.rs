//! Command-line interface.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use psiv_core::simulation::{ConcentrationConfig, GridSpec, RandomStrataConfig, ScenarioConfig, Study};
use psiv_core::theory::{
    asyvar_iv, asyvar_iv_ps, bias_one_sided_exact, bias_one_sided_taylor, bias_two_sided_taylor, cov_itt_f,
    enumerate_expectation, moments, prob_zero_compliance, var_f, var_itt, OracleTarget, PsVarianceForm, TaylorMoments,
    UndefinedConvention,
};
use psiv_core::{EstimatorConfig, Method};
use serde_json::Value;

use crate::error::{Error, Result, EXIT_INPUT, EXIT_OK};
use crate::io::{self, DatasetSchema};
use crate::report::{self, SeMode, DEFAULT_METHODS};
use crate::runner;

const SCHEMA_HELP: &str = "\
Dataset schema (JSON, passed with --schema):
  {
    \"z_col\": \"z\",            assignment column, values 0/1
    \"d_col\": \"d\",            treatment-received column, values 0/1
    \"y_col\": \"y\",            numeric outcome column
    \"strata_cols\": [\"block\", \"age\"],
    \"binning\": {\"age\": {\"quantile\": 4}}   other columns are categorical
  }
Strata are the cross-product of the binned strata columns, joined with `|`.
Rows with an empty or NA value in any strata column form the `missing` stratum.

Simulation configs (JSON) use the field names of the scenario, grid,
concentration (`r`, `target_P`, `stratum_weights`) and random-strata (`k`)
configurations; `{\"grid\": {...}}` expands the factorial grid.";

#[derive(Debug, Parser)]
#[command(name = "psiv", version, about = "Post-stratified IV estimation and simulation", after_help = SCHEMA_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the CACE on a dataset with every requested estimator.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        /// JSON dataset schema; defaults to columns z, d, y and no strata.
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Strata columns (categorical), used when no schema is given.
        #[arg(long, value_delimiter = ',')]
        strata: Vec<String>,
        /// Comma-separated estimator tags, e.g. UNSTRAT,IV_W,DSS.
        #[arg(long, value_delimiter = ',')]
        estimators: Vec<String>,
        #[arg(long, default_value_t = 0.02)]
        dss_threshold: f64,
        #[arg(long, default_value_t = 10.0)]
        dsf_fmin: f64,
        #[arg(long, value_enum, default_value_t = SeMode::Bloom)]
        se: SeMode,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        out: OutputFormat,
        /// Also print the per-stratum table.
        #[arg(long)]
        strata_report: bool,
    },
    /// Run the Monte Carlo study described by a JSON config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Metrics CSV path; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Compliance-concentration study over a list of ratios `r`.
    SweepR {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        r: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Random-stratification study over a list of stratum counts `k`.
    RandomStrata {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Finite-population bias and variance of the IV estimator for a
    /// potential-outcome table (columns y0,y1,d0,d1[,stratum]).
    Theory {
        #[arg(long)]
        science_table: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    EXIT_OK
                }
                _ => EXIT_INPUT,
            };
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if matches!(e, Error::Schema(_) | Error::Config(_) | Error::Json(_)) {
                let _ = writeln!(stderr, "\n{SCHEMA_HELP}");
            }
            e.exit_code()
        }
    }
}

fn io_err(path: &str, source: std::io::Error) -> Error {
    Error::Io {
        path: path.into(),
        source,
    }
}

fn emit(out: Option<&Path>, stdout: &mut dyn Write, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| io_err(&p.display().to_string(), e)),
        None => stdout.write_all(bytes).map_err(|e| io_err("<stdout>", e)),
    }
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    if names.is_empty() {
        return Ok(DEFAULT_METHODS.to_vec());
    }
    names
        .iter()
        .map(|n| n.parse::<Method>().map_err(|e| Error::Config(e.to_string())))
        .collect()
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Analyze {
            data,
            schema,
            strata,
            estimators,
            dss_threshold,
            dsf_fmin,
            se,
            out,
            strata_report,
        } => {
            let methods = parse_methods(&estimators)?;
            if methods.contains(&Method::Oracle) {
                return Err(Error::Config(
                    "ORACLE needs potential outcomes and is simulation-only".into(),
                ));
            }
            let config = EstimatorConfig {
                dss_threshold,
                dsf_f_min: dsf_fmin,
            };
            config.validate().map_err(|e| Error::Config(e.to_string()))?;
            let schema = match schema {
                Some(p) => DatasetSchema::load(&p)?,
                None => DatasetSchema {
                    strata_cols: strata,
                    ..DatasetSchema::default()
                },
            };
            let sample = io::load_csv(&data, &schema)?;
            let table = report::analyze(&sample, &methods, &config, se);
            let strata_rows = strata_report.then(|| report::stratum_report(&sample));
            let text = match out {
                OutputFormat::Csv => {
                    let mut t = table.to_csv();
                    if let Some(rows) = &strata_rows {
                        t.push('\n');
                        t.push_str(&report::stratum_report_csv(rows));
                    }
                    t
                }
                OutputFormat::Json => {
                    let v = serde_json::json!({ "estimates": table, "strata": strata_rows });
                    format!("{}\n", serde_json::to_string_pretty(&v)?)
                }
            };
            emit(None, stdout, text.as_bytes())
        }
        Command::Simulate { config, out, threads } => {
            let studies = studies_from_json(&parse_json(&config)?)?;
            simulate(&studies, out.as_deref(), threads, stdout)
        }
        Command::SweepR {
            config,
            r,
            out,
            threads,
        } => {
            let base = parse_json(&config)?;
            let studies = if r.is_empty() {
                vec![concentration(base)?]
            } else {
                r.iter()
                    .map(|&ri| concentration(with_key(&base, "r", Value::from(ri))?))
                    .collect::<Result<Vec<_>>>()?
            };
            simulate(&studies, out.as_deref(), threads, stdout)
        }
        Command::RandomStrata {
            config,
            k,
            out,
            threads,
        } => {
            let base = parse_json(&config)?;
            let studies = if k.is_empty() {
                vec![random_strata(base)?]
            } else {
                k.iter()
                    .map(|&ki| random_strata(with_key(&base, "k", Value::from(ki))?))
                    .collect::<Result<Vec<_>>>()?
            };
            simulate(&studies, out.as_deref(), threads, stdout)
        }
        Command::Theory { science_table, p } => {
            let table = io::load_science_table(&science_table)?;
            let text = theory_report(&table, p)?;
            emit(None, stdout, text.as_bytes())
        }
    }
}

fn simulate(studies: &[Study], out: Option<&Path>, threads: usize, stdout: &mut dyn Write) -> Result<()> {
    let rows = runner::run_studies(studies, threads)?;
    let mut buf = Vec::new();
    io::write_metrics_csv(&rows, &mut buf)?;
    emit(out, stdout, &buf)
}

fn parse_json(path: &Path) -> Result<Value> {
    Ok(serde_json::from_str(&io::read_to_string(path)?)?)
}

fn with_key(base: &Value, key: &str, v: Value) -> Result<Value> {
    let mut obj = base.clone();
    obj.as_object_mut()
        .ok_or_else(|| Error::Config("config must be a JSON object".into()))?
        .insert(key.into(), v);
    Ok(obj)
}

fn scenario_keys() -> Vec<String> {
    match serde_json::to_value(ScenarioConfig::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

fn check_keys(v: &Value, extra: &[&str]) -> Result<()> {
    let known = scenario_keys();
    if let Value::Object(m) = v {
        for k in m.keys() {
            if !known.iter().any(|x| x == k) && !extra.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
        }
        Ok(())
    } else {
        Err(Error::Config("config must be a JSON object".into()))
    }
}

fn scenario(v: Value) -> Result<Study> {
    check_keys(&v, &[])?;
    let c: ScenarioConfig = serde_json::from_value(v)?;
    c.validate()?;
    Ok(Study::Grid(c))
}

fn concentration(v: Value) -> Result<Study> {
    check_keys(&v, &["r", "target_P", "stratum_weights"])?;
    let c: ConcentrationConfig = serde_json::from_value(v)?;
    c.validate()?;
    Ok(Study::Concentration(c))
}

fn random_strata(v: Value) -> Result<Study> {
    check_keys(&v, &["k"])?;
    let c: RandomStrataConfig = serde_json::from_value(v)?;
    if c.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    c.scenario.validate()?;
    Ok(Study::RandomStrata(c))
}

/// Interprets a simulation config: one scenario, a list of scenarios, a
/// `{"grid": ...}` factorial grid, a concentration config (has `r`) or a
/// random-strata config (has `k`).
pub fn studies_from_json(v: &Value) -> Result<Vec<Study>> {
    match v {
        Value::Array(items) => items.iter().cloned().map(scenario).collect(),
        Value::Object(m) if m.contains_key("grid") => {
            if m.len() > 1 {
                return Err(Error::Config("a grid config holds only the `grid` key".into()));
            }
            let spec: GridSpec = serde_json::from_value(m["grid"].clone())?;
            if let Some(base) = m["grid"].get("base") {
                check_keys(base, &[])?;
            }
            spec.expand()
                .into_iter()
                .map(|c| {
                    c.validate()?;
                    Ok(Study::Grid(c))
                })
                .collect()
        }
        Value::Object(m) if m.contains_key("r") || m.contains_key("target_P") => Ok(vec![concentration(v.clone())?]),
        Value::Object(m) if m.contains_key("k") => Ok(vec![random_strata(v.clone())?]),
        Value::Object(_) => Ok(vec![scenario(v.clone())?]),
        _ => Err(Error::Config("config must be a JSON object or array".into())),
    }
}

fn line(buf: &mut String, name: &str, value: psiv_core::Result<f64>) {
    match value {
        Ok(v) => buf.push_str(&format!("{name},{v}\n")),
        Err(e) => buf.push_str(&format!("{name},NA ({e})\n")),
    }
}

/// `quantity,value` lines with the analytic oracles for a science table.
pub fn theory_report(table: &psiv_core::ScienceTable, p: f64) -> Result<String> {
    if table.n_compliers() == 0 {
        return Err(psiv_core::Error::NoCompliers.into());
    }
    let m = moments(table, p)?;
    let mut out = String::from("quantity,value\n");
    out.push_str(&format!("n,{}\n", m.n()));
    out.push_str(&format!("p,{p}\n"));
    out.push_str(&format!("strata,{}\n", m.strata.len()));
    out.push_str(&format!("pi_c,{}\n", m.overall.pi_c));
    out.push_str(&format!("pi_a,{}\n", m.overall.pi_a));
    out.push_str(&format!("pi_n,{}\n", m.overall.pi_n));
    out.push_str(&format!("cace,{}\n", m.overall.cace));
    out.push_str(&format!("itt,{}\n", m.overall.itt));
    out.push_str(&format!("var_itt,{}\n", var_itt(&m)));
    out.push_str(&format!("var_f,{}\n", var_f(&m)));
    out.push_str(&format!("cov_itt_f,{}\n", cov_itt_f(&m)));
    line(&mut out, "asyvar_iv", asyvar_iv(&m));
    line(&mut out, "asyvar_iv_ps", asyvar_iv_ps(&m, PsVarianceForm::default()));
    line(&mut out, "bias_two_sided_taylor", bias_two_sided_taylor(&m));
    if table.is_one_sided() {
        line(&mut out, "prob_f_zero", prob_zero_compliance(table, p));
        line(
            &mut out,
            "bias_one_sided_exact",
            bias_one_sided_exact(table, p, UndefinedConvention::Condition),
        );
        line(
            &mut out,
            "bias_taylor_hypergeometric",
            bias_one_sided_taylor(&m, TaylorMoments::Hypergeometric),
        );
        line(
            &mut out,
            "bias_taylor_binomial",
            bias_one_sided_taylor(&m, TaylorMoments::Binomial),
        );
    }
    match enumerate_expectation(table, p, OracleTarget::Iv, UndefinedConvention::Condition) {
        Ok(e) => {
            out.push_str(&format!("bias_enumerated,{}\n", e.mean - m.overall.cace));
            out.push_str(&format!("var_enumerated,{}\n", e.variance));
            out.push_str(&format!("undefined_mass,{}\n", e.undefined_mass));
            out.push_str(&format!("assignments,{}\n", e.assignments));
        }
        Err(psiv_core::Error::Infeasible(_)) => {}
        Err(e) => return Err(e.into()),
    }
    Ok(out)
}
