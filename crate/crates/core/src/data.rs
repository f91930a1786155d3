//! Observed and potential-outcome data, stratum grouping and validation.
//!
//! An [`ObservedSample`] is immutable once validated: strata are re-indexed
//! densely `0..G` and every per-stratum summary is computed up front, so the
//! estimators only ever read cached [`StratumSummary`] values.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Arm, Error, Result};

/// Label given to units whose stratum value is missing.
pub const MISSING_STRATUM: &str = "missing";

/// One raw observed row before validation. `z` and `d` are kept as integers so
/// that out-of-domain values can be reported rather than silently coerced.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub z: i64,
    pub d: i64,
    pub y: f64,
    /// `None` routes the unit to the [`MISSING_STRATUM`] stratum.
    pub stratum: Option<String>,
}

impl UnitRecord {
    pub fn new(z: i64, d: i64, y: f64, stratum: impl Into<String>) -> Self {
        Self {
            z,
            d,
            y,
            stratum: Some(stratum.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedUnit {
    pub z: bool,
    pub d: bool,
    pub y: f64,
    /// Dense stratum index into [`ObservedSample::labels`].
    pub stratum: usize,
}

/// Per-group counts, arm means and arm (co)variances.
///
/// Variance fields use the `n_z - 1` denominator and are `None` when the arm
/// has fewer than two units.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumSummary {
    /// `None` for the pooled (whole-sample) summary.
    pub stratum: Option<usize>,
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
    pub ybar1: f64,
    pub ybar0: f64,
    pub dbar1: f64,
    pub dbar0: f64,
    pub itt_hat: f64,
    pub f_hat: f64,
    pub s2_y1: Option<f64>,
    pub s2_y0: Option<f64>,
    pub s2_d1: Option<f64>,
    pub s2_d0: Option<f64>,
    pub s_yd1: Option<f64>,
    pub s_yd0: Option<f64>,
}

#[derive(Default)]
struct ArmMoments {
    n: usize,
    ybar: f64,
    dbar: f64,
    s2_y: Option<f64>,
    s2_d: Option<f64>,
    s_yd: Option<f64>,
}

impl ArmMoments {
    fn compute<'a>(units: impl Iterator<Item = &'a ObservedUnit> + Clone) -> Self {
        let (mut n, mut sy, mut sd) = (0usize, 0.0, 0.0);
        for u in units.clone() {
            n += 1;
            sy += u.y;
            sd += f64::from(u8::from(u.d));
        }
        if n == 0 {
            return Self::default();
        }
        let nf = n as f64;
        let (ybar, dbar) = (sy / nf, sd / nf);
        if n < 2 {
            return Self {
                n,
                ybar,
                dbar,
                ..Self::default()
            };
        }
        let (mut syy, mut sdd, mut syd) = (0.0, 0.0, 0.0);
        for u in units {
            let ey = u.y - ybar;
            let ed = f64::from(u8::from(u.d)) - dbar;
            syy += ey * ey;
            sdd += ed * ed;
            syd += ey * ed;
        }
        let denom = nf - 1.0;
        Self {
            n,
            ybar,
            dbar,
            s2_y: Some(syy / denom),
            s2_d: Some(sdd / denom),
            s_yd: Some(syd / denom),
        }
    }
}

impl StratumSummary {
    pub(crate) fn from_units<'a>(
        stratum: Option<usize>,
        units: impl Iterator<Item = &'a ObservedUnit> + Clone,
    ) -> Self {
        let treated = ArmMoments::compute(units.clone().filter(|u| u.z));
        let control = ArmMoments::compute(units.filter(|u| !u.z));
        Self {
            stratum,
            n: treated.n + control.n,
            n1: treated.n,
            n0: control.n,
            ybar1: treated.ybar,
            ybar0: control.ybar,
            dbar1: treated.dbar,
            dbar0: control.dbar,
            itt_hat: treated.ybar - control.ybar,
            f_hat: treated.dbar - control.dbar,
            s2_y1: treated.s2_y,
            s2_y0: control.s2_y,
            s2_d1: treated.s2_d,
            s2_d0: control.s2_d,
            s_yd1: treated.s_yd,
            s_yd0: control.s_yd,
        }
    }

    /// Residual sum of squares of the within-group regression of `d` on `z`.
    pub fn first_stage_rss(&self) -> f64 {
        let n1 = self.n1 as f64;
        let n0 = self.n0 as f64;
        n1 * self.dbar1 * (1.0 - self.dbar1) + n0 * self.dbar0 * (1.0 - self.dbar0)
    }

    pub fn has_two_per_arm(&self) -> bool {
        self.n1 >= 2 && self.n0 >= 2
    }
}

/// A validated observed sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSample {
    units: Vec<ObservedUnit>,
    labels: Vec<String>,
    strata_index: Vec<Vec<usize>>,
    summaries: Vec<StratumSummary>,
    pooled: StratumSummary,
}

impl ObservedSample {
    /// Validates raw records and re-indexes strata densely.
    ///
    /// Labels are ordered numerically where they parse as integers, then
    /// lexically, with the missing stratum last; the order is a pure function
    /// of the label set.
    pub fn validate(records: Vec<UnitRecord>) -> Result<Self> {
        let mut raw_labels = Vec::with_capacity(records.len());
        let mut units = Vec::with_capacity(records.len());
        for (index, r) in records.into_iter().enumerate() {
            let z = binary(index, "z", r.z)?;
            let d = binary(index, "d", r.d)?;
            if !r.y.is_finite() {
                return Err(Error::NonFinite { index, field: "y" });
            }
            units.push(ObservedUnit {
                z,
                d,
                y: r.y,
                stratum: 0,
            });
            raw_labels.push(r.stratum.unwrap_or_else(|| MISSING_STRATUM.to_string()));
        }
        let (dense, labels) = densify_labels(&raw_labels);
        for (u, g) in units.iter_mut().zip(dense) {
            u.stratum = g;
        }
        Self::from_units(units, labels)
    }

    /// Builds a sample from units that already carry dense stratum indices.
    pub fn from_units(units: Vec<ObservedUnit>, labels: Vec<String>) -> Result<Self> {
        if units.len() < 4 {
            return Err(Error::SampleTooSmall(units.len()));
        }
        let g_count = labels.len();
        let mut strata_index = alloc::vec![Vec::new(); g_count];
        for (i, u) in units.iter().enumerate() {
            if !u.y.is_finite() {
                return Err(Error::NonFinite { index: i, field: "y" });
            }
            strata_index
                .get_mut(u.stratum)
                .ok_or(Error::UnknownStratum(u.stratum))?
                .push(i);
        }
        let mut summaries = Vec::with_capacity(g_count);
        for (g, idx) in strata_index.iter().enumerate() {
            let s = StratumSummary::from_units(Some(g), idx.iter().map(|&i| &units[i]));
            for (count, arm) in [(s.n1, Arm::Treatment), (s.n0, Arm::Control)] {
                if count == 0 {
                    return Err(Error::EmptyArm {
                        stratum: labels[g].clone(),
                        arm,
                    });
                }
            }
            summaries.push(s);
        }
        let pooled = StratumSummary::from_units(None, units.iter());
        Ok(Self {
            units,
            labels,
            strata_index,
            summaries,
            pooled,
        })
    }

    pub fn units(&self) -> &[ObservedUnit] {
        &self.units
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, g: usize) -> Option<&str> {
        self.labels.get(g).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn num_strata(&self) -> usize {
        self.labels.len()
    }

    pub fn n_treated(&self) -> usize {
        self.pooled.n1
    }

    pub fn n_control(&self) -> usize {
        self.pooled.n0
    }

    /// Unit indices belonging to stratum `g`.
    pub fn stratum_units(&self, g: usize) -> Option<&[usize]> {
        self.strata_index.get(g).map(Vec::as_slice)
    }

    pub fn summaries(&self) -> &[StratumSummary] {
        &self.summaries
    }

    pub fn summary(&self, g: usize) -> Option<&StratumSummary> {
        self.summaries.get(g)
    }

    /// Summary of the whole sample ignoring strata.
    pub fn pooled(&self) -> &StratumSummary {
        &self.pooled
    }

    /// The same units with every stratum merged into one.
    pub fn collapse_strata(&self) -> Self {
        let units = self
            .units
            .iter()
            .map(|u| ObservedUnit { stratum: 0, ..*u })
            .collect::<Vec<_>>();
        let n = units.len();
        let summary = StratumSummary::from_units(Some(0), units.iter());
        Self {
            units,
            labels: alloc::vec!["all".to_string()],
            strata_index: alloc::vec![(0..n).collect()],
            summaries: alloc::vec![summary],
            pooled: self.pooled.clone(),
        }
    }
}

fn binary(index: usize, field: &'static str, value: i64) -> Result<bool> {
    match value {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::NonBinary { index, field, value }),
    }
}

/// Summary of stratum `g` of a validated sample.
pub fn summarize_stratum(sample: &ObservedSample, g: usize) -> Result<StratumSummary> {
    sample.summary(g).cloned().ok_or(Error::UnknownStratum(g))
}

/// Maps raw labels onto dense indices. Returns the per-item index and the
/// ordered label table.
pub fn densify_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut labels: Vec<String> = raw.to_vec();
    labels.sort_by(|a, b| label_key(a).cmp(&label_key(b)));
    labels.dedup();
    let dense = raw
        .iter()
        .map(|l| {
            labels
                .binary_search_by(|probe| label_key(probe).cmp(&label_key(l)))
                .expect("label present after dedup")
        })
        .collect();
    (dense, labels)
}

fn label_key(label: &str) -> (bool, u8, i64, &str) {
    let missing = label == MISSING_STRATUM;
    match label.parse::<i64>() {
        Ok(v) => (missing, 0, v, label),
        Err(_) => (missing, 1, 0, label),
    }
}

/// Principal stratum of a unit under monotonicity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComplianceType {
    Complier,
    AlwaysTaker,
    NeverTaker,
}

impl ComplianceType {
    /// `None` for defiers.
    pub fn classify(d0: bool, d1: bool) -> Option<Self> {
        match (d0, d1) {
            (false, true) => Some(Self::Complier),
            (true, true) => Some(Self::AlwaysTaker),
            (false, false) => Some(Self::NeverTaker),
            (true, false) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScienceUnit {
    pub y0: f64,
    pub y1: f64,
    pub d0: bool,
    pub d1: bool,
    pub stratum: usize,
}

impl ScienceUnit {
    pub fn compliance_type(&self) -> ComplianceType {
        ComplianceType::classify(self.d0, self.d1).expect("validated tables hold no defiers")
    }

    pub fn is_complier(&self) -> bool {
        !self.d0 && self.d1
    }

    pub fn y(&self, z: bool) -> f64 {
        if z {
            self.y1
        } else {
            self.y0
        }
    }

    pub fn d(&self, z: bool) -> bool {
        if z {
            self.d1
        } else {
            self.d0
        }
    }
}

/// Full potential-outcome table of a finite population.
#[derive(Debug, Clone, PartialEq)]
pub struct ScienceTable {
    units: Vec<ScienceUnit>,
    labels: Vec<String>,
}

impl ScienceTable {
    /// Rejects defiers, exclusion-restriction violations, non-finite outcomes
    /// and stratum indices outside `labels`.
    pub fn new(units: Vec<ScienceUnit>, labels: Vec<String>) -> Result<Self> {
        for (index, u) in units.iter().enumerate() {
            if !u.y0.is_finite() {
                return Err(Error::NonFinite { index, field: "y0" });
            }
            if !u.y1.is_finite() {
                return Err(Error::NonFinite { index, field: "y1" });
            }
            if u.d0 && !u.d1 {
                return Err(Error::Defier { index });
            }
            if u.d0 == u.d1 && u.y0 != u.y1 {
                return Err(Error::ExclusionViolation { index });
            }
            if u.stratum >= labels.len() {
                return Err(Error::UnknownStratum(u.stratum));
            }
        }
        Ok(Self { units, labels })
    }

    /// Builds a table whose strata are given as labels.
    pub fn from_labeled(rows: Vec<(ScienceUnit, Option<String>)>) -> Result<Self> {
        let raw: Vec<String> = rows
            .iter()
            .map(|(_, l)| l.clone().unwrap_or_else(|| MISSING_STRATUM.to_string()))
            .collect();
        let (dense, labels) = densify_labels(&raw);
        let units = rows
            .into_iter()
            .zip(dense)
            .map(|((u, _), g)| ScienceUnit { stratum: g, ..u })
            .collect();
        Self::new(units, labels)
    }

    /// Single-stratum table.
    pub fn unstratified(units: Vec<ScienceUnit>) -> Result<Self> {
        let units = units.into_iter().map(|u| ScienceUnit { stratum: 0, ..u }).collect();
        Self::new(units, alloc::vec!["all".to_string()])
    }

    pub fn units(&self) -> &[ScienceUnit] {
        &self.units
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn num_strata(&self) -> usize {
        self.labels.len()
    }

    pub fn is_one_sided(&self) -> bool {
        self.units.iter().all(|u| !u.d0)
    }

    pub fn n_compliers(&self) -> usize {
        self.units.iter().filter(|u| u.is_complier()).count()
    }

    /// Mean of `y1 - y0` over compliers; `None` without compliers.
    pub fn true_cace(&self) -> Option<f64> {
        let (mut n, mut s) = (0usize, 0.0);
        for u in self.units.iter().filter(|u| u.is_complier()) {
            n += 1;
            s += u.y1 - u.y0;
        }
        (n > 0).then(|| s / n as f64)
    }

    /// Same potential outcomes under a new stratification.
    pub fn relabel(&self, strata: &[usize], labels: Vec<String>) -> Result<Self> {
        if strata.len() != self.units.len() {
            return Err(Error::LengthMismatch {
                expected: self.units.len(),
                got: strata.len(),
            });
        }
        let units = self
            .units
            .iter()
            .zip(strata)
            .map(|(u, &g)| ScienceUnit { stratum: g, ..*u })
            .collect();
        Self::new(units, labels)
    }
}

/// Reveals the observed sample implied by `assignment` (`true` = treated).
pub fn science_to_observed(table: &ScienceTable, assignment: &[bool]) -> Result<ObservedSample> {
    if assignment.len() != table.len() {
        return Err(Error::LengthMismatch {
            expected: table.len(),
            got: assignment.len(),
        });
    }
    let units = table
        .units()
        .iter()
        .zip(assignment)
        .map(|(u, &z)| ObservedUnit {
            z,
            d: u.d(z),
            y: u.y(z),
            stratum: u.stratum,
        })
        .collect();
    ObservedSample::from_units(units, table.labels().to_vec())
}

/// Estimator tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "UNSTRAT")]
    Unstratified,
    #[serde(rename = "IV_W")]
    IvWithin,
    #[serde(rename = "IV_A")]
    IvAcross,
    #[serde(rename = "DSS")]
    DropSmallStrata,
    #[serde(rename = "DSF")]
    DropSmallF,
    #[serde(rename = "PWIV")]
    PrecisionWeighted,
    #[serde(rename = "ORACLE")]
    Oracle,
    #[serde(rename = "TSLS_DUMMY")]
    TslsDummies,
    #[serde(rename = "TSLS_WEIGHTED")]
    TslsWeighted,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Unstratified,
        Method::IvWithin,
        Method::IvAcross,
        Method::DropSmallStrata,
        Method::DropSmallF,
        Method::PrecisionWeighted,
        Method::Oracle,
        Method::TslsDummies,
        Method::TslsWeighted,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Unstratified => "UNSTRAT",
            Method::IvWithin => "IV_W",
            Method::IvAcross => "IV_A",
            Method::DropSmallStrata => "DSS",
            Method::DropSmallF => "DSF",
            Method::PrecisionWeighted => "PWIV",
            Method::Oracle => "ORACLE",
            Method::TslsDummies => "TSLS_DUMMY",
            Method::TslsWeighted => "TSLS_WEIGHTED",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == upper)
            .ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown estimator `{s}`")))
    }
}

/// One estimator's result row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub method: Method,
    pub estimate: f64,
    pub se_bloom: Option<f64>,
    pub se_delta: Option<f64>,
    /// Model-based SE for the regression comparators.
    pub se_conventional: Option<f64>,
    /// Estimated compliance over the units actually used.
    pub f_hat: f64,
    pub n_used: usize,
    pub strata_kept: Vec<usize>,
    /// Two-sided normal tail probability of `estimate / se_bloom`.
    pub p_value: Option<f64>,
}

impl EstimateReport {
    pub(crate) fn new(method: Method, estimate: f64, f_hat: f64) -> Self {
        Self {
            method,
            estimate,
            se_bloom: None,
            se_delta: None,
            se_conventional: None,
            f_hat,
            n_used: 0,
            strata_kept: Vec::new(),
            p_value: None,
        }
    }

    pub(crate) fn with_bloom(mut self, se: Option<f64>) -> Self {
        self.se_bloom = se;
        self.p_value = se.and_then(|s| crate::stats::normal_two_sided_p(self.estimate, s));
        self
    }

    /// The SE a results table reports: Bloom where defined, else the
    /// conventional regression SE.
    pub fn reported_se(&self) -> Option<f64> {
        self.se_bloom.or(self.se_conventional)
    }
}
