//! Results tables in the layout of an empirical write-up: one row per
//! estimator with compliance, estimate, SE, SE relative to the unstratified
//! estimator and a normal-approximation p-value, plus a per-stratum table.

use psiv_core::estimators::{estimate, EstimatorConfig};
use psiv_core::stats::normal_two_sided_p;
use psiv_core::variance::{bloom_kernel, var_itt_neyman};
use psiv_core::{EstimateReport, Method, ObservedSample};
use serde::Serialize;

/// Estimators reported when none are requested.
pub const DEFAULT_METHODS: [Method; 7] = [
    Method::Unstratified,
    Method::IvWithin,
    Method::IvAcross,
    Method::DropSmallStrata,
    Method::DropSmallF,
    Method::PrecisionWeighted,
    Method::TslsDummies,
];

/// Which standard errors the table carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SeMode {
    #[default]
    Bloom,
    Delta,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: Method,
    pub pi_c_hat: Option<f64>,
    pub estimate: Option<f64>,
    pub se_bloom: Option<f64>,
    pub se_delta: Option<f64>,
    /// `100 * SE / SE_UNSTRAT`, on the Bloom SE unless only delta SEs
    /// were requested.
    pub pct_se: Option<f64>,
    pub n: Option<usize>,
    /// Two-sided normal tail of `estimate / SE_bloom`.
    pub p_value: Option<f64>,
    /// Why the row is unavailable.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub se_mode: SeMode,
    pub rows: Vec<ReportRow>,
}

fn bloom_of(r: &EstimateReport) -> Option<f64> {
    r.reported_se()
}

fn delta_of(r: &EstimateReport) -> Option<f64> {
    r.se_delta.or(r.se_conventional)
}

/// Runs each requested estimator. A failing estimator yields a row marked
/// unavailable instead of aborting the table.
pub fn analyze(sample: &ObservedSample, methods: &[Method], config: &EstimatorConfig, se_mode: SeMode) -> ReportTable {
    let baseline = estimate(Method::Unstratified, sample, config).ok();
    let base_se = baseline.as_ref().and_then(|b| match se_mode {
        SeMode::Delta => delta_of(b),
        _ => bloom_of(b),
    });
    let rows = methods
        .iter()
        .map(|&method| match estimate(method, sample, config) {
            Ok(r) => {
                let se_bloom = bloom_of(&r);
                let se_delta = delta_of(&r);
                let own = match se_mode {
                    SeMode::Delta => se_delta,
                    _ => se_bloom,
                };
                let pct_se = match (own, base_se) {
                    (Some(a), Some(b)) if b > 0.0 => Some(100.0 * (a / b)),
                    _ => None,
                };
                ReportRow {
                    method,
                    pi_c_hat: Some(r.f_hat),
                    estimate: Some(r.estimate),
                    se_bloom: (se_mode != SeMode::Delta).then_some(se_bloom).flatten(),
                    se_delta: (se_mode != SeMode::Bloom).then_some(se_delta).flatten(),
                    pct_se,
                    n: Some(r.n_used),
                    p_value: se_bloom.and_then(|s| normal_two_sided_p(r.estimate, s)),
                    error: None,
                }
            }
            Err(e) => ReportRow {
                method,
                pi_c_hat: None,
                estimate: None,
                se_bloom: None,
                se_delta: None,
                pct_se: None,
                n: None,
                p_value: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    ReportTable { se_mode, rows }
}

/// Formats `x` with `digits` significant digits in plain decimal notation.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return "NA".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let decimals = |v: f64| {
        let e = v.abs().log10().floor() as i32;
        (digits as i32 - 1 - e).max(0) as usize
    };
    let mut d = decimals(x);
    let s = format!("{x:.d$}");
    let rounded: f64 = s.parse().unwrap_or(x);
    if rounded != 0.0 && decimals(rounded) < d {
        d = decimals(rounded);
        return format!("{x:.d$}");
    }
    s
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), |v| fmt_sig(v, 4))
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut header = vec!["method", "pi_c_hat", "estimate"];
        match self.se_mode {
            SeMode::Bloom => header.push("se_bloom"),
            SeMode::Delta => header.push("se_delta"),
            SeMode::Both => header.extend(["se_bloom", "se_delta"]),
        }
        header.extend(["pct_se", "n", "p_value", "note"]);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.method.tag().to_string(), cell(r.pi_c_hat), cell(r.estimate)];
            match self.se_mode {
                SeMode::Bloom => rec.push(cell(r.se_bloom)),
                SeMode::Delta => rec.push(cell(r.se_delta)),
                SeMode::Both => rec.extend([cell(r.se_bloom), cell(r.se_delta)]),
            }
            rec.push(r.pct_se.map_or_else(|| "NA".into(), |v| format!("{v:.1}")));
            rec.push(r.n.map_or_else(|| "NA".into(), |n| n.to_string()));
            rec.push(cell(r.p_value));
            rec.push(
                r.error
                    .as_ref()
                    .map_or_else(String::new, |e| format!("unavailable: {e}")),
            );
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn row(&self, method: Method) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumRow {
    pub stratum: String,
    pub n: usize,
    pub pi_c_hat: f64,
    /// `None` when the stratum shows no compliance.
    pub cace: Option<f64>,
    pub se_bloom: Option<f64>,
}

/// Within-stratum IV estimates with Bloom SEs.
pub fn stratum_report(sample: &ObservedSample) -> Vec<StratumRow> {
    sample
        .summaries()
        .iter()
        .enumerate()
        .map(|(g, s)| {
            let defined = s.f_hat != 0.0;
            StratumRow {
                stratum: sample.label(g).unwrap_or_default().to_string(),
                n: s.n,
                pi_c_hat: s.f_hat,
                cace: defined.then(|| s.itt_hat / s.f_hat),
                se_bloom: if defined {
                    var_itt_neyman(s).ok().map(|v| bloom_kernel(v, s.f_hat).sqrt())
                } else {
                    None
                },
            }
        })
        .collect()
}

pub fn stratum_report_csv(rows: &[StratumRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stratum", "n", "pi_c_hat", "cace", "se_bloom"])
        .expect("in-memory write");
    for r in rows {
        let undef = |x: Option<f64>| x.map_or_else(|| "undefined".into(), |v| fmt_sig(v, 4));
        w.write_record([
            r.stratum.clone(),
            r.n.to_string(),
            fmt_sig(r.pi_c_hat, 4),
            undef(r.cace),
            undef(r.se_bloom),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}
