//! CSV ingestion, strata construction from covariates, and CSV/JSON output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use psiv_core::data::MISSING_STRATUM;
use psiv_core::simulation::ScenarioMetrics;
use psiv_core::{ObservedSample, ScienceTable, ScienceUnit, UnitRecord};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label used when no strata columns are configured.
pub const SINGLE_STRATUM: &str = "all";

/// How one strata column is turned into labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Every distinct value is its own level.
    #[default]
    Categorical,
    /// `k` approximately equal-size groups by rank.
    Quantile(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    OwnStratum,
}

/// Column mapping for a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    #[serde(default = "default_z")]
    pub z_col: String,
    #[serde(default = "default_d")]
    pub d_col: String,
    #[serde(default = "default_y")]
    pub y_col: String,
    #[serde(default)]
    pub strata_cols: Vec<String>,
    /// Columns absent from this map are categorical.
    #[serde(default)]
    pub binning: BTreeMap<String, Binning>,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
}

fn default_z() -> String {
    "z".into()
}
fn default_d() -> String {
    "d".into()
}
fn default_y() -> String {
    "y".into()
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            z_col: default_z(),
            d_col: default_d(),
            y_col: default_y(),
            strata_cols: Vec::new(),
            binning: BTreeMap::new(),
            missing_policy: MissingPolicy::OwnStratum,
        }
    }
}

impl DatasetSchema {
    /// Schema for files written by [`write_sample_csv`].
    pub fn stratum_column() -> Self {
        Self {
            strata_cols: vec!["stratum".into()],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = vec![&self.z_col, &self.d_col, &self.y_col];
        names.extend(self.strata_cols.iter().map(String::as_str));
        let mut sorted = names.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Schema(format!("column `{}` is listed twice", w[0])));
        }
        for (col, rule) in &self.binning {
            if !self.strata_cols.contains(col) {
                return Err(Error::Schema(format!(
                    "binning given for `{col}`, which is not a strata column"
                )));
            }
            if let Binning::Quantile(k) = rule {
                if *k < 2 {
                    return Err(Error::Schema(format!("quantile binning of `{col}` needs k >= 2")));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Values treated as missing in strata columns.
pub fn is_missing(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") || t == "."
}

fn parse_indicator(field: &str) -> Option<i64> {
    let t = field.trim();
    if let Ok(v) = t.parse::<i64>() {
        return Some(v);
    }
    match t.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 1e15 => Some(v as i64),
        _ => None,
    }
}

fn parse_outcome(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

/// Quantile bin (0-based) of each value, using midpoint ranks for ties:
/// a value with average 1-based rank `r` among `n` goes to bin
/// `floor((r - 0.5) k / n)`.
pub fn quantile_bins(values: &[f64], k: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut rank = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            rank[idx] = mid;
        }
        i = j;
    }
    rank.iter()
        .map(|r| {
            let b = ((r - 0.5) * k as f64 / n as f64).floor() as usize;
            b.min(k - 1)
        })
        .collect()
}

struct RawRow {
    line: u64,
    z: i64,
    d: i64,
    y: f64,
    strata: Vec<String>,
}

fn level_labels(schema: &DatasetSchema, col: usize, rows: &[RawRow]) -> Result<Vec<Option<String>>> {
    let name = &schema.strata_cols[col];
    match schema.binning.get(name).copied().unwrap_or_default() {
        Binning::Categorical => Ok(rows
            .iter()
            .map(|r| {
                let v = r.strata[col].trim();
                (!is_missing(v)).then(|| v.to_string())
            })
            .collect()),
        Binning::Quantile(k) => {
            let mut present = Vec::new();
            let mut values = Vec::new();
            for (i, r) in rows.iter().enumerate() {
                let v = &r.strata[col];
                if is_missing(v) {
                    continue;
                }
                let x = v
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::MalformedRow {
                        line: r.line,
                        reason: format!("`{name}` value `{v}` is not numeric"),
                    })?;
                present.push(i);
                values.push(x);
            }
            let bins = quantile_bins(&values, k);
            let mut sizes = vec![0usize; k];
            for &b in &bins {
                sizes[b] += 1;
            }
            if let Some(empty) = sizes.iter().position(|&s| s == 0) {
                return Err(Error::EmptyBin {
                    column: name.clone(),
                    bin: empty + 1,
                    k,
                });
            }
            let mut out = vec![None; rows.len()];
            for (&i, &b) in present.iter().zip(&bins) {
                out[i] = Some(format!("q{}", b + 1));
            }
            Ok(out)
        }
    }
}

/// Reads a dataset from any reader.
pub fn load_csv_reader<R: Read>(reader: R, schema: &DatasetSchema) -> Result<ObservedSample> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyFile);
    }
    let zi = column_index(&headers, &schema.z_col)?;
    let di = column_index(&headers, &schema.d_col)?;
    let yi = column_index(&headers, &schema.y_col)?;
    let si = schema
        .strata_cols
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::MalformedRow {
                line,
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let bad = |col: &str, v: &str| Error::MalformedRow {
            line,
            reason: format!("`{col}` value `{v}` is missing or invalid"),
        };
        let z = parse_indicator(field(zi)).ok_or_else(|| bad(&schema.z_col, field(zi)))?;
        let d = parse_indicator(field(di)).ok_or_else(|| bad(&schema.d_col, field(di)))?;
        let y = parse_outcome(field(yi)).ok_or_else(|| bad(&schema.y_col, field(yi)))?;
        rows.push(RawRow {
            line,
            z,
            d,
            y,
            strata: si.iter().map(|&i| field(i).to_string()).collect(),
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile);
    }

    let per_column = (0..schema.strata_cols.len())
        .map(|c| level_labels(schema, c, &rows))
        .collect::<Result<Vec<_>>>()?;
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let stratum = if per_column.is_empty() {
                Some(SINGLE_STRATUM.to_string())
            } else {
                let parts: Option<Vec<&str>> = per_column.iter().map(|col| col[i].as_deref()).collect();
                parts.map(|p| p.join("|"))
            };
            UnitRecord {
                z: r.z,
                d: r.d,
                y: r.y,
                stratum,
            }
        })
        .collect();
    ObservedSample::validate(records).map_err(Error::Core)
}

pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<ObservedSample> {
    load_csv_reader(open(path)?, schema)
}

/// Writes a sample as `z,d,y,stratum`; reading it back with
/// [`DatasetSchema::stratum_column`] reproduces the sample.
pub fn write_sample_csv<W: Write>(sample: &ObservedSample, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["z", "d", "y", "stratum"])?;
    for u in sample.units() {
        let label = sample.label(u.stratum).unwrap_or(MISSING_STRATUM);
        w.write_record([
            u8::from(u.z).to_string(),
            u8::from(u.d).to_string(),
            u.y.to_string(),
            label.to_string(),
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}

/// Reads a potential-outcome table with columns `y0,y1,d0,d1` and an
/// optional `stratum` column.
pub fn load_science_table_reader<R: Read>(reader: R) -> Result<ScienceTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx = ["y0", "y1", "d0", "d1"]
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let si = column_index(&headers, "stratum").ok();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |i: usize| record.get(i).unwrap_or("");
        let bad = |what: &str| Error::MalformedRow {
            line,
            reason: format!("`{what}` is missing or invalid"),
        };
        let y0 = parse_outcome(get(idx[0])).ok_or_else(|| bad("y0"))?;
        let y1 = parse_outcome(get(idx[1])).ok_or_else(|| bad("y1"))?;
        let flag = |i: usize, name: &str| match parse_indicator(get(idx[i])) {
            Some(0) => Ok(false),
            Some(1) => Ok(true),
            _ => Err(bad(name)),
        };
        let d0 = flag(2, "d0")?;
        let d1 = flag(3, "d1")?;
        let label = si.and_then(|i| {
            let v = get(i).trim();
            (!is_missing(v)).then(|| v.to_string())
        });
        let label = if si.is_some() {
            label
        } else {
            Some(SINGLE_STRATUM.to_string())
        };
        rows.push((
            ScienceUnit {
                y0,
                y1,
                d0,
                d1,
                stratum: 0,
            },
            label,
        ));
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile);
    }
    ScienceTable::from_labeled(rows).map_err(Error::Core)
}

pub fn load_science_table(path: &Path) -> Result<ScienceTable> {
    load_science_table_reader(open(path)?)
}

/// Metrics CSV header, in column order.
pub const METRICS_COLUMNS: [&str; 20] = [
    "scenario_id",
    "n",
    "pi_c_target",
    "predicts_c",
    "predicts_y",
    "nt_shift",
    "het_tau",
    "estimator",
    "bias",
    "true_se",
    "rmse",
    "cal_bloom",
    "cal_delta",
    "rel_instab_bloom",
    "rel_instab_delta",
    "drop_rate",
    "fail_rate",
    "mean_n_used",
    "seed",
    "rng_family",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes metrics rows. Floats use the shortest decimal that round-trips;
/// undefined metrics are empty cells.
pub fn write_metrics_csv<W: Write>(rows: &[ScenarioMetrics], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_COLUMNS)?;
    for m in rows {
        w.write_record([
            m.scenario_id.clone(),
            m.n.to_string(),
            m.pi_c_target.to_string(),
            m.predicts_c.to_string(),
            m.predicts_y.to_string(),
            m.nt_shift.to_string(),
            m.het_tau.to_string(),
            m.estimator.tag().to_string(),
            opt(m.bias),
            opt(m.true_se),
            opt(m.rmse),
            opt(m.cal_bloom),
            opt(m.cal_delta),
            opt(m.rel_instab_bloom),
            opt(m.rel_instab_delta),
            m.drop_rate.to_string(),
            m.fail_rate.to_string(),
            opt(m.mean_n_used),
            m.seed.to_string(),
            m.rng_family.clone(),
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}
