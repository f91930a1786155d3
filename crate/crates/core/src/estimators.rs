//! Point estimators for the complier average causal effect.
//!
//! The stratified estimators share one aggregation path: given a set of kept
//! strata with weights `N_g / N_kept`, the estimate is
//! `sum w_g ITT_g / sum w_g f_g`. IV-within, DSS and DSF differ only in which
//! strata they keep; IV-across keeps them all.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{EstimateReport, Method, ObservedSample, ScienceTable, StratumSummary};
use crate::error::{Arm, Error, Result};
use crate::variance;

/// Thresholds for the stratum-dropping estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Minimum estimated compliance for a stratum to be kept by DSS.
    pub dss_threshold: f64,
    /// Minimum first-stage F for a stratum to be kept by DSF.
    pub dsf_f_min: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            dss_threshold: 0.02,
            dsf_f_min: 10.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dss_threshold > 0.0 && self.dss_threshold < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "dss_threshold must lie in (0, 1), got {}",
                self.dss_threshold
            )));
        }
        if !(self.dsf_f_min > 0.0 && self.dsf_f_min.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "dsf_f_min must be positive and finite, got {}",
                self.dsf_f_min
            )));
        }
        Ok(())
    }
}

pub fn itt_hat(sample: &ObservedSample) -> f64 {
    sample.pooled().itt_hat
}

pub fn f_hat(sample: &ObservedSample) -> f64 {
    sample.pooled().f_hat
}

/// Wald ratio `ITT_hat / f_hat` ignoring strata.
pub fn iv_unstratified(sample: &ObservedSample) -> Result<EstimateReport> {
    let s = sample.pooled();
    if s.f_hat == 0.0 {
        return Err(Error::ZeroCompliance);
    }
    let estimate = s.itt_hat / s.f_hat;
    let mut r = EstimateReport::new(Method::Unstratified, estimate, s.f_hat)
        .with_bloom(variance::se_bloom_unstrat(sample).ok());
    r.se_delta = variance::se_delta_unstrat(sample).ok();
    r.n_used = sample.len();
    r.strata_kept = (0..sample.num_strata()).collect();
    Ok(r)
}

/// Shared aggregation over `kept` strata.
fn aggregate(sample: &ObservedSample, kept: Vec<usize>, method: Method) -> Result<EstimateReport> {
    if kept.is_empty() {
        return Err(Error::AllStrataDropped);
    }
    let itt = variance::itt_ps(sample, &kept)?;
    let f = variance::f_ps(sample, &kept)?;
    if f == 0.0 {
        return Err(Error::ZeroCompliance);
    }
    let estimate = itt / f;
    let mut r = EstimateReport::new(method, estimate, f).with_bloom(variance::se_bloom_ps(sample, &kept).ok());
    r.se_delta = variance::se_delta_ps(sample, &kept, estimate).ok();
    r.n_used = kept.iter().map(|&g| sample.summaries()[g].n).sum();
    r.strata_kept = kept;
    Ok(r)
}

/// Complier-weighted average of stratum IV estimates, computed in its
/// weighted-ITT form. Strata with `f_g = 0` carry no compliers and are
/// dropped; negative `f_g` strata are retained.
pub fn iv_within(sample: &ObservedSample) -> Result<EstimateReport> {
    let kept: Vec<usize> = sample
        .summaries()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.f_hat != 0.0)
        .map(|(g, _)| g)
        .collect();
    if kept.is_empty() {
        return Err(Error::ZeroCompliance);
    }
    aggregate(sample, kept, Method::IvWithin)
}

/// Ratio of post-stratified ITT to post-stratified compliance over all strata.
pub fn iv_across(sample: &ObservedSample) -> Result<EstimateReport> {
    aggregate(sample, (0..sample.num_strata()).collect(), Method::IvAcross)
}

/// Drop-small-strata: keeps strata with `f_g >= dss_threshold`.
pub fn iv_dss(sample: &ObservedSample, config: &EstimatorConfig) -> Result<EstimateReport> {
    let kept = sample
        .summaries()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.f_hat >= config.dss_threshold)
        .map(|(g, _)| g)
        .collect();
    aggregate(sample, kept, Method::DropSmallStrata)
}

/// Homoskedastic OLS F statistic for `d ~ z` within one stratum.
///
/// Returns `f64::INFINITY` for a perfect first stage with nonzero slope and
/// `0.0` when the estimated compliance is zero.
pub fn first_stage_f(summary: &StratumSummary) -> Result<f64> {
    if summary.n < 3 {
        return Err(Error::TooSmall {
            stratum: summary.stratum.unwrap_or(0),
            n: summary.n,
        });
    }
    let f = summary.f_hat;
    if f == 0.0 {
        return Ok(0.0);
    }
    let n = summary.n as f64;
    let ess = (summary.n1 as f64 * summary.n0 as f64 / n) * f * f;
    let rss = summary.first_stage_rss();
    if rss <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((n - 2.0) * ess / rss)
}

/// Drop-small-F: keeps strata whose first-stage F is at least `dsf_f_min`.
/// Strata too small for the test are dropped.
pub fn iv_dsf(sample: &ObservedSample, config: &EstimatorConfig) -> Result<EstimateReport> {
    let kept = sample
        .summaries()
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(first_stage_f(s), Ok(f) if f >= config.dsf_f_min))
        .map(|(g, _)| g)
        .collect();
    aggregate(sample, kept, Method::DropSmallF)
}

/// Precision-weighted average of stratum IV estimates with weights
/// `f_g^2 / var(ITT_g)`. The Bloom SE slot carries `sqrt(1 / Z)`.
pub fn iv_pwiv(sample: &ObservedSample) -> Result<EstimateReport> {
    let mut terms = Vec::with_capacity(sample.num_strata());
    for (g, s) in sample.summaries().iter().enumerate() {
        let v = variance::var_itt_neyman(s)?;
        if s.f_hat == 0.0 {
            continue;
        }
        if v <= 0.0 {
            return Err(Error::DegenerateVariance { stratum: g });
        }
        terms.push((g, s.f_hat * s.f_hat / v, s.itt_hat / s.f_hat));
    }
    let z: f64 = terms.iter().map(|t| t.1).sum();
    if terms.is_empty() || z <= 0.0 {
        return Err(Error::AllStrataDropped);
    }
    let mut estimate = 0.0;
    for &(_, w, c) in &terms {
        estimate += (w / z) * c;
    }
    let kept: Vec<usize> = terms.iter().map(|t| t.0).collect();
    let f = variance::f_ps(sample, &kept)?;
    let mut r = EstimateReport::new(Method::PrecisionWeighted, estimate, f).with_bloom(Some(libm::sqrt(1.0 / z)));
    r.n_used = kept.iter().map(|&g| sample.summaries()[g].n).sum();
    r.strata_kept = kept;
    Ok(r)
}

/// Difference in observed means among the true compliers.
pub fn oracle_complier_dim(table: &ScienceTable, assignment: &[bool]) -> Result<EstimateReport> {
    if assignment.len() != table.len() {
        return Err(Error::LengthMismatch {
            expected: table.len(),
            got: assignment.len(),
        });
    }
    let mut arms = [(0usize, 0.0f64, 0.0f64); 2];
    for (u, &z) in table.units().iter().zip(assignment) {
        if u.is_complier() {
            let a = &mut arms[usize::from(z)];
            a.0 += 1;
            a.1 += u.y(z);
        }
    }
    for (idx, arm) in [(1usize, Arm::Treatment), (0, Arm::Control)] {
        if arms[idx].0 == 0 {
            return Err(Error::NoCompliersInArm(arm));
        }
    }
    let m1 = arms[1].1 / arms[1].0 as f64;
    let m0 = arms[0].1 / arms[0].0 as f64;
    for (u, &z) in table.units().iter().zip(assignment) {
        if u.is_complier() {
            let e = u.y(z) - if z { m1 } else { m0 };
            arms[usize::from(z)].2 += e * e;
        }
    }
    let se = (arms[0].0 >= 2 && arms[1].0 >= 2).then(|| {
        let v1 = arms[1].2 / (arms[1].0 - 1) as f64 / arms[1].0 as f64;
        let v0 = arms[0].2 / (arms[0].0 - 1) as f64 / arms[0].0 as f64;
        libm::sqrt(v1 + v0)
    });
    let mut r = EstimateReport::new(Method::Oracle, m1 - m0, 1.0).with_bloom(se);
    r.n_used = arms[0].0 + arms[1].0;
    r.strata_kept = (0..table.num_strata()).collect();
    Ok(r)
}

/// Both stages of the weighted two-stage least squares fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedTslsFit {
    pub first_intercept: f64,
    pub first_slope: f64,
    pub second_intercept: f64,
    /// Coefficient on predicted uptake.
    pub estimate: f64,
}

/// Weighted simple regression of `y` on `x`, returning `(intercept, slope)`.
fn weighted_simple_ols(w: &[f64], x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for i in 0..w.len() {
        let dx = x[i] - mx;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * (y[i] - my);
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Weighted 2SLS with unit weights `(N_g / N_{g,z}) (n_z / N)`, regressing
/// uptake on assignment and then outcome on predicted uptake.
pub fn tsls_weighted_fit(sample: &ObservedSample) -> Result<WeightedTslsFit> {
    let n = sample.len() as f64;
    let n_arm = [sample.n_control() as f64, sample.n_treated() as f64];
    let units = sample.units();
    let mut w = Vec::with_capacity(units.len());
    let mut z = Vec::with_capacity(units.len());
    let mut d = Vec::with_capacity(units.len());
    let mut y = Vec::with_capacity(units.len());
    for u in units {
        let s = &sample.summaries()[u.stratum];
        let ngz = if u.z { s.n1 } else { s.n0 } as f64;
        w.push((s.n as f64 / ngz) * (n_arm[usize::from(u.z)] / n));
        z.push(f64::from(u8::from(u.z)));
        d.push(f64::from(u8::from(u.d)));
        y.push(u.y);
    }
    let (a1, b1) = weighted_simple_ols(&w, &z, &d).ok_or(Error::RankDeficient)?;
    if b1 == 0.0 {
        return Err(Error::ZeroCompliance);
    }
    let dhat: Vec<f64> = z.iter().map(|&zi| a1 + b1 * zi).collect();
    let (a2, b2) = weighted_simple_ols(&w, &dhat, &y).ok_or(Error::ZeroCompliance)?;
    Ok(WeightedTslsFit {
        first_intercept: a1,
        first_slope: b1,
        second_intercept: a2,
        estimate: b2,
    })
}

pub fn tsls_weighted(sample: &ObservedSample) -> Result<f64> {
    tsls_weighted_fit(sample).map(|f| f.estimate)
}

/// [`tsls_weighted`] packaged as a report row.
pub fn tsls_weighted_report(sample: &ObservedSample) -> Result<EstimateReport> {
    let fit = tsls_weighted_fit(sample)?;
    let mut r = EstimateReport::new(Method::TslsWeighted, fit.estimate, fit.first_slope);
    r.n_used = sample.len();
    r.strata_kept = (0..sample.num_strata()).collect();
    Ok(r)
}

const RANK_TOL: f64 = 1e-10;

/// Solves `A x = b` for symmetric positive definite `A`, also returning the
/// inverse. Fails when a pivot is negligible relative to the diagonal.
fn spd_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let chol = a.cholesky().ok_or(Error::RankDeficient)?;
    let l = chol.l_dirty();
    for i in 0..l.nrows() {
        let p = l[(i, i)];
        if (p * p).partial_cmp(&(RANK_TOL * scale)) != Some(core::cmp::Ordering::Greater) {
            return Err(Error::RankDeficient);
        }
    }
    Ok((chol.solve(b), chol.inverse()))
}

/// Unweighted 2SLS with an intercept and `G - 1` stratum indicators in both
/// stages. Reports the coefficient on predicted uptake with the conventional
/// homoskedastic SE (residuals use actual uptake).
pub fn tsls_dummies(sample: &ObservedSample) -> Result<EstimateReport> {
    let g_count = sample.num_strata();
    let k = g_count + 1;
    let n = sample.len();
    // Columns: intercept, indicators for strata 1..G, then the instrument or
    // predicted uptake. Every regressor is constant within a (stratum, arm)
    // cell, so cross products reduce to cell counts and sums.
    let row = |g: usize, last: f64| {
        let mut r = DVector::<f64>::zeros(k);
        r[0] = 1.0;
        if g > 0 {
            r[g] = 1.0;
        }
        r[k - 1] = last;
        r
    };
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xtd = DVector::<f64>::zeros(k);
    for s in sample.summaries() {
        let g = s.stratum.unwrap_or(0);
        for (z, cnt, dbar) in [(1.0, s.n1, s.dbar1), (0.0, s.n0, s.dbar0)] {
            let r = row(g, z);
            let c = cnt as f64;
            xtx += &r * r.transpose() * c;
            xtd += &r * (c * dbar);
        }
    }
    let (beta1, _) = spd_solve(xtx, &xtd)?;
    let b_z = beta1[k - 1];
    let cell_dhat = |g: usize, z: f64| row(g, z).dot(&beta1);

    let mut xtx2 = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    for s in sample.summaries() {
        let g = s.stratum.unwrap_or(0);
        for (z, cnt, ybar) in [(1.0, s.n1, s.ybar1), (0.0, s.n0, s.ybar0)] {
            let r = row(g, cell_dhat(g, z));
            let c = cnt as f64;
            xtx2 += &r * r.transpose() * c;
            xty += &r * (c * ybar);
        }
    }
    if b_z == 0.0 {
        return Err(Error::RankDeficient);
    }
    let (beta2, inv) = spd_solve(xtx2, &xty)?;
    let estimate = beta2[k - 1];

    let mut rss = 0.0;
    for u in sample.units() {
        let mut fit = beta2[0] + estimate * f64::from(u8::from(u.d));
        if u.stratum > 0 {
            fit += beta2[u.stratum];
        }
        let e = u.y - fit;
        rss += e * e;
    }
    let se = (n > k).then(|| libm::sqrt(rss / (n - k) as f64 * inv[(k - 1, k - 1)]));

    let mut r = EstimateReport::new(Method::TslsDummies, estimate, b_z);
    r.se_conventional = se;
    r.p_value = se.and_then(|s| crate::stats::normal_two_sided_p(estimate, s));
    r.n_used = n;
    r.strata_kept = (0..g_count).collect();
    Ok(r)
}

/// Runs one estimator by tag on an observed sample. The oracle needs the
/// science table and is not available here.
pub fn estimate(method: Method, sample: &ObservedSample, config: &EstimatorConfig) -> Result<EstimateReport> {
    match method {
        Method::Unstratified => iv_unstratified(sample),
        Method::IvWithin => iv_within(sample),
        Method::IvAcross => iv_across(sample),
        Method::DropSmallStrata => iv_dss(sample, config),
        Method::DropSmallF => iv_dsf(sample, config),
        Method::PrecisionWeighted => iv_pwiv(sample),
        Method::TslsDummies => tsls_dummies(sample),
        Method::TslsWeighted => tsls_weighted_report(sample),
        Method::Oracle => Err(Error::InvalidConfig(
            "the oracle estimator needs the potential-outcome table".into(),
        )),
    }
}
