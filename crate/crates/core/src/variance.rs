//! Bloom and delta-method standard errors, unstratified and post-stratified.
//!
//! Every delta-method variance is routed through one kernel,
//! `(V_itt + c^2 V_f - 2 c C) / f^2`, and every post-stratified form weights
//! stratum components by `(N_g / N_kept)^2`. With a single stratum the weight
//! is exactly `1.0`, so the stratified and unstratified paths agree bit for bit.

use crate::data::{ObservedSample, StratumSummary};
use crate::error::{Arm, Error, Result};

/// Plug-in arm-wise variance components of `(ITT_hat, f_hat)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceComponents {
    pub var_itt_hat: f64,
    pub var_f_hat: f64,
    pub cov_itt_f_hat: f64,
}

impl VarianceComponents {
    /// Neyman plug-in components for one summary (a stratum or the pooled
    /// sample).
    pub fn from_summary(s: &StratumSummary) -> Result<Self> {
        let (Some(y1), Some(y0), Some(d1), Some(d0), Some(c1), Some(c0)) =
            (s.s2_y1, s.s2_y0, s.s2_d1, s.s2_d0, s.s_yd1, s.s_yd0)
        else {
            return Err(too_few(s));
        };
        let n1 = s.n1 as f64;
        let n0 = s.n0 as f64;
        Ok(Self {
            var_itt_hat: y1 / n1 + y0 / n0,
            var_f_hat: d1 / n1 + d0 / n0,
            cov_itt_f_hat: c1 / n1 + c0 / n0,
        })
    }

    fn scaled_add(&mut self, w2: f64, other: &Self) {
        self.var_itt_hat += w2 * other.var_itt_hat;
        self.var_f_hat += w2 * other.var_f_hat;
        self.cov_itt_f_hat += w2 * other.cov_itt_f_hat;
    }

    const ZERO: Self = Self {
        var_itt_hat: 0.0,
        var_f_hat: 0.0,
        cov_itt_f_hat: 0.0,
    };
}

fn too_few(s: &StratumSummary) -> Error {
    let arm = if s.n1 < 2 { Arm::Treatment } else { Arm::Control };
    Error::TooFewUnits {
        arm,
        stratum: s.stratum,
    }
}

/// Bloom variance `V_itt / f^2`.
pub fn bloom_kernel(var_itt: f64, f: f64) -> f64 {
    var_itt / (f * f)
}

/// Three-term delta variance with `c` substituted for the CACE.
pub fn delta_kernel(v: &VarianceComponents, f: f64, c: f64) -> f64 {
    let num = v.var_itt_hat + c * c * v.var_f_hat - 2.0 * c * v.cov_itt_f_hat;
    num.max(0.0) / (f * f)
}

/// Conservative Neyman variance of the ITT estimator over one summary.
pub fn var_itt_neyman(s: &StratumSummary) -> Result<f64> {
    match (s.s2_y1, s.s2_y0) {
        (Some(v1), Some(v0)) => Ok(v1 / s.n1 as f64 + v0 / s.n0 as f64),
        _ => Err(too_few(s)),
    }
}

fn nonzero(f: f64) -> Result<f64> {
    if f == 0.0 || !f.is_finite() {
        Err(Error::ZeroCompliance)
    } else {
        Ok(f)
    }
}

pub fn se_bloom_unstrat(sample: &ObservedSample) -> Result<f64> {
    let s = sample.pooled();
    let f = nonzero(s.f_hat)?;
    Ok(libm::sqrt(bloom_kernel(var_itt_neyman(s)?, f)))
}

/// Delta SE of `ITT_hat / f_hat` on the pooled sample.
pub fn se_delta_unstrat(sample: &ObservedSample) -> Result<f64> {
    let s = sample.pooled();
    let f = nonzero(s.f_hat)?;
    let v = VarianceComponents::from_summary(s)?;
    Ok(libm::sqrt(delta_kernel(&v, f, s.itt_hat / f)))
}

/// Kept-strata weights `N_g / N_kept` paired with their summaries.
fn kept_weights<'a>(
    sample: &'a ObservedSample,
    kept: &'a [usize],
) -> Result<(f64, impl Iterator<Item = (f64, &'a StratumSummary)> + 'a)> {
    let mut n_kept = 0usize;
    for &g in kept {
        n_kept += sample.summary(g).ok_or(Error::UnknownStratum(g))?.n;
    }
    if n_kept == 0 {
        return Err(Error::AllStrataDropped);
    }
    let nk = n_kept as f64;
    let iter = kept.iter().map(move |&g| {
        let s = &sample.summaries()[g];
        (s.n as f64 / nk, s)
    });
    Ok((nk, iter))
}

/// Post-stratified compliance `sum_g (N_g / N_kept) f_g` over `kept`.
pub fn f_ps(sample: &ObservedSample, kept: &[usize]) -> Result<f64> {
    let (_, it) = kept_weights(sample, kept)?;
    let mut f = 0.0;
    for (w, s) in it {
        f += w * s.f_hat;
    }
    Ok(f)
}

/// Post-stratified ITT `sum_g (N_g / N_kept) ITT_g` over `kept`.
pub fn itt_ps(sample: &ObservedSample, kept: &[usize]) -> Result<f64> {
    let (_, it) = kept_weights(sample, kept)?;
    let mut t = 0.0;
    for (w, s) in it {
        t += w * s.itt_hat;
    }
    Ok(t)
}

/// Post-stratified plug-in components `sum_g (N_g / N_kept)^2 V_g` over `kept`.
pub fn components_ps(sample: &ObservedSample, kept: &[usize]) -> Result<VarianceComponents> {
    let (_, it) = kept_weights(sample, kept)?;
    let mut acc = VarianceComponents::ZERO;
    for (w, s) in it {
        acc.scaled_add(w * w, &VarianceComponents::from_summary(s)?);
    }
    Ok(acc)
}

/// Bloom SE over the kept strata, with `N` and `f_PS` renormalized to them.
pub fn se_bloom_ps(sample: &ObservedSample, kept: &[usize]) -> Result<f64> {
    let f = nonzero(f_ps(sample, kept)?)?;
    let (_, it) = kept_weights(sample, kept)?;
    let mut v = 0.0;
    for (w, s) in it {
        v += w * w * var_itt_neyman(s)?;
    }
    Ok(libm::sqrt(bloom_kernel(v, f)))
}

/// Delta SE over the kept strata using `cace_hat` in the quadratic and cross
/// terms.
pub fn se_delta_ps(sample: &ObservedSample, kept: &[usize], cace_hat: f64) -> Result<f64> {
    let f = nonzero(f_ps(sample, kept)?)?;
    let v = components_ps(sample, kept)?;
    Ok(libm::sqrt(delta_kernel(&v, f, cace_hat)))
}

/// Delta SE written as a complier-weighted sum of stratum-level IV delta
/// variances, `sum_g (N_g f_g / sum_k N_k f_k)^2 var_g`, with each `var_g`
/// evaluated at the shared `cace_hat`. Requires every kept `f_g != 0`.
pub fn se_delta_within_form(sample: &ObservedSample, kept: &[usize], cace_hat: f64) -> Result<f64> {
    let (_, it) = kept_weights(sample, kept)?;
    let mut denom = 0.0;
    let mut parts = alloc::vec::Vec::with_capacity(kept.len());
    for (w, s) in it {
        let f = nonzero(s.f_hat)?;
        let v = VarianceComponents::from_summary(s)?;
        denom += w * f;
        parts.push((w * f, delta_kernel(&v, f, cace_hat)));
    }
    let denom = nonzero(denom)?;
    let mut total = 0.0;
    for (wf, var_g) in parts {
        let omega = wf / denom;
        total += omega * omega * var_g;
    }
    Ok(libm::sqrt(total))
}

/// Inverse-precision SE `sqrt(1 / Z)` of the precision-weighted estimator.
pub fn se_pwiv(sample: &ObservedSample) -> Result<f64> {
    crate::estimators::iv_pwiv(sample)?
        .se_bloom
        .ok_or(Error::AllStrataDropped)
}
