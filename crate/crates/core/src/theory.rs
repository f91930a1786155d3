//! Finite-population oracles evaluated on a full potential-outcome table.
//!
//! Everything here is computed under complete randomization of `pN` units to
//! treatment. The closed forms (true variances, the post-stratified
//! asymptotic variance, Taylor bias expansions) are paired with brute-force
//! oracles: exhaustive enumeration of assignments and Monte Carlo sampling
//! of assignments.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{science_to_observed, ComplianceType, ScienceTable, ScienceUnit};
use crate::error::{Error, Result};
use crate::estimators;
use crate::stats::{binomial_coefficient, ln_binomial, pairwise_sum};

/// Largest number of assignments [`enumerate_expectation`] will visit.
pub const ENUMERATION_LIMIT: f64 = 1.0e6;

/// Type proportions, type means and variance components of one group of
/// units (the whole population or one stratum).
///
/// Type means are `0.0` when the type is absent; every formula multiplies
/// them by the matching proportion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMoments {
    pub n: usize,
    pub pi_c: f64,
    pub pi_a: f64,
    pub pi_n: f64,
    pub ybar_c0: f64,
    pub ybar_c1: f64,
    pub ybar_n: f64,
    pub ybar_a: f64,
    /// Complier average effect in the group (`0.0` without compliers).
    pub cace: f64,
    pub itt: f64,
    pub s2_y1: f64,
    pub s2_y0: f64,
    pub s2_y01: f64,
    /// Closed-form uptake variances.
    pub s2_d1: f64,
    pub s2_d0: f64,
    pub s2_d01: f64,
    pub s_yd1: f64,
    pub s_yd0: f64,
    pub s_yd01: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationMoments {
    pub p: f64,
    pub n1: usize,
    pub overall: GroupMoments,
    pub strata: Vec<GroupMoments>,
}

impl PopulationMoments {
    pub fn n(&self) -> usize {
        self.overall.n
    }

    pub fn n0(&self) -> usize {
        self.overall.n - self.n1
    }

    /// `Ybar_c(0) - Ybar_n(0)`, the complier/never-taker control gap.
    pub fn delta(&self) -> f64 {
        self.overall.ybar_c0 - self.overall.ybar_n
    }
}

fn centered_cross(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = pairwise_sum(a) / n;
    let mb = pairwise_sum(b) / n;
    let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    pairwise_sum(&prods) / (n - 1.0)
}

fn group_moments(units: &[&ScienceUnit]) -> Result<GroupMoments> {
    let n = units.len();
    if n < 2 {
        return Err(Error::Infeasible(alloc::format!(
            "a group of {n} unit(s) has no finite-population variance"
        )));
    }
    let nf = n as f64;
    let mut count = [0usize; 3];
    let mut sums = [0.0f64; 4];
    let mut cace_sum = 0.0;
    for u in units {
        match u.compliance_type() {
            ComplianceType::Complier => {
                count[0] += 1;
                sums[0] += u.y0;
                sums[1] += u.y1;
                cace_sum += u.y1 - u.y0;
            }
            ComplianceType::NeverTaker => {
                count[1] += 1;
                sums[2] += u.y0;
            }
            ComplianceType::AlwaysTaker => {
                count[2] += 1;
                sums[3] += u.y1;
            }
        }
    }
    let mean = |s: f64, c: usize| if c > 0 { s / c as f64 } else { 0.0 };
    let (pi_c, pi_n, pi_a) = (count[0] as f64 / nf, count[1] as f64 / nf, count[2] as f64 / nf);
    let cace = mean(cace_sum, count[0]);

    let y1: Vec<f64> = units.iter().map(|u| u.y1).collect();
    let y0: Vec<f64> = units.iter().map(|u| u.y0).collect();
    let d1: Vec<f64> = units.iter().map(|u| f64::from(u8::from(u.d1))).collect();
    let d0: Vec<f64> = units.iter().map(|u| f64::from(u8::from(u.d0))).collect();
    let ty: Vec<f64> = units.iter().map(|u| u.y1 - u.y0).collect();
    let td: Vec<f64> = d1.iter().zip(&d0).map(|(a, b)| a - b).collect();
    let itt = pairwise_sum(&ty) / nf;
    let k = nf / (nf - 1.0);

    Ok(GroupMoments {
        n,
        pi_c,
        pi_a,
        pi_n,
        ybar_c0: mean(sums[0], count[0]),
        ybar_c1: mean(sums[1], count[0]),
        ybar_n: mean(sums[2], count[1]),
        ybar_a: mean(sums[3], count[2]),
        cace,
        itt,
        s2_y1: centered_cross(&y1, &y1),
        s2_y0: centered_cross(&y0, &y0),
        s2_y01: centered_cross(&ty, &ty),
        s2_d1: k * pi_n * (pi_c + pi_a),
        s2_d0: k * pi_a * (pi_c + pi_n),
        s2_d01: k * pi_c * (pi_a + pi_n),
        s_yd1: centered_cross(&y1, &d1),
        s_yd0: centered_cross(&y0, &d0),
        s_yd01: centered_cross(&ty, &td),
    })
}

/// Treated-arm size `pN`, rejecting non-integral or degenerate splits.
pub fn treated_count(n: usize, p: f64) -> Result<usize> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidConfig(alloc::format!("p must lie in (0, 1), got {p}")));
    }
    let x = p * n as f64;
    let r = libm::round(x);
    if (x - r).abs() > 1e-9 * (1.0 + x) || r < 1.0 || r >= n as f64 {
        return Err(Error::NonIntegralArm { n, p });
    }
    Ok(r as usize)
}

/// Population and per-stratum moments under treatment fraction `p`.
pub fn moments(table: &ScienceTable, p: f64) -> Result<PopulationMoments> {
    let n1 = treated_count(table.len(), p)?;
    let all: Vec<&ScienceUnit> = table.units().iter().collect();
    let overall = group_moments(&all)?;
    let mut strata = Vec::with_capacity(table.num_strata());
    for g in 0..table.num_strata() {
        let members: Vec<&ScienceUnit> = all.iter().copied().filter(|u| u.stratum == g).collect();
        strata.push(group_moments(&members)?);
    }
    Ok(PopulationMoments { p, n1, overall, strata })
}

/// True randomization variance of the ITT estimator.
pub fn var_itt(m: &PopulationMoments) -> f64 {
    let o = &m.overall;
    o.s2_y1 / m.n1 as f64 + o.s2_y0 / m.n0() as f64 - o.s2_y01 / m.n() as f64
}

/// True randomization variance of `f_hat`, closed form.
pub fn var_f(m: &PopulationMoments) -> f64 {
    let o = &m.overall;
    let p = m.p;
    (o.pi_n * (1.0 - o.pi_n) / p + o.pi_a * (1.0 - o.pi_a) / (1.0 - p) - o.pi_c * (1.0 - o.pi_c)) / (m.n() as f64 - 1.0)
}

/// Closed-form covariance terms of a group: `p`-arm, `(1-p)`-arm and
/// effect-heterogeneity pieces, each already divided by `N_g - 1`.
fn cov_terms(g: &GroupMoments, p: f64) -> (f64, f64, f64) {
    let nm1 = g.n as f64 - 1.0;
    let a = g.pi_n / (p * nm1) * (g.pi_c * (g.ybar_c1 - g.ybar_n) + g.pi_a * (g.ybar_a - g.ybar_n));
    let b = g.pi_a / ((1.0 - p) * nm1) * (g.pi_c * (g.ybar_a - g.ybar_c0) + g.pi_n * (g.ybar_a - g.ybar_n));
    let c = g.pi_c * (1.0 - g.pi_c) / nm1 * g.cace;
    (a, b, c)
}

/// True randomization covariance of `(ITT_hat, f_hat)`, closed form.
pub fn cov_itt_f(m: &PopulationMoments) -> f64 {
    let (a, b, c) = cov_terms(&m.overall, m.p);
    a + b - c
}

fn require_compliers(m: &PopulationMoments) -> Result<()> {
    if m.overall.pi_c > 0.0 {
        Ok(())
    } else {
        Err(Error::NoCompliers)
    }
}

/// Three-term delta-method asymptotic variance of the Wald estimator.
pub fn asyvar_iv(m: &PopulationMoments) -> Result<f64> {
    require_compliers(m)?;
    let pc = m.overall.pi_c;
    let tau = m.overall.cace;
    Ok((var_itt(m) + tau * tau * var_f(m) - 2.0 * tau * cov_itt_f(m)) / (pc * pc))
}

/// Stratum weighting used by [`asyvar_iv_ps`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PsVarianceForm {
    /// Exact `(N_g/N)(N_g-1)/(N-1)` factors on the two variance terms and the
    /// blocked `N_g^2/N^2` approximation for the covariance.
    #[default]
    PaperMixed,
    /// `N_g^2/N^2` on every term.
    Blocked,
    /// `(N_g/N)(N_g-1)/(N-1)` on every term.
    ExactFactor,
}

/// The three components `(asyVar(ITT_PS), asyVar(f_PS), asyCov)`.
pub fn ps_components(m: &PopulationMoments, form: PsVarianceForm) -> (f64, f64, f64) {
    let n = m.n() as f64;
    let p = m.p;
    let (mut v_itt, mut v_f, mut cov) = (0.0, 0.0, 0.0);
    for g in &m.strata {
        let ng = g.n as f64;
        let exact = (ng / n) * ((ng - 1.0) / (n - 1.0));
        let blocked = (ng / n) * (ng / n);
        let (w_var, w_cov) = match form {
            PsVarianceForm::PaperMixed => (exact, blocked),
            PsVarianceForm::Blocked => (blocked, blocked),
            PsVarianceForm::ExactFactor => (exact, exact),
        };
        v_itt += w_var * (g.s2_y0 / ((1.0 - p) * ng) + g.s2_y1 / (p * ng) - g.s2_y01 / ng);
        v_f += w_var * (g.s2_d1 / (p * ng) + g.s2_d0 / ((1.0 - p) * ng) - g.s2_d01 / ng);
        let (a, b, c) = cov_terms(g, p);
        cov += w_cov * (a + b - c);
    }
    (v_itt, v_f, cov)
}

/// Asymptotic variance of the post-stratified IV-across estimator.
pub fn asyvar_iv_ps(m: &PopulationMoments, form: PsVarianceForm) -> Result<f64> {
    require_compliers(m)?;
    let (v_itt, v_f, cov) = ps_components(m, form);
    let pc = m.overall.pi_c;
    let tau = m.overall.cace;
    Ok((v_itt + tau * tau * v_f - 2.0 * tau * cov) / (pc * pc))
}

/// Convention for assignments where an estimator is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UndefinedConvention {
    /// Average over the assignments where the estimator is defined.
    #[default]
    Condition,
    /// Fail if any assignment leaves the estimator undefined.
    ErrorIfPositiveMass,
}

fn one_sided_counts(table: &ScienceTable, p: f64) -> Result<(usize, usize, usize)> {
    if !table.is_one_sided() {
        return Err(Error::TwoSidedInput);
    }
    let n = table.len();
    let n1 = treated_count(n, p)?;
    let nc = table.n_compliers();
    if nc == 0 {
        return Err(Error::NoCompliers);
    }
    Ok((n, n1, nc))
}

/// Distribution of the number of treated compliers: `(k, P(K = k))`.
pub fn treated_complier_pmf(n: usize, n1: usize, nc: usize) -> Vec<(usize, f64)> {
    let lo = n1.saturating_sub(n - nc);
    let hi = n1.min(nc);
    let ln_total = ln_binomial(n, n1);
    (lo..=hi)
        .map(|k| {
            let ln = ln_binomial(nc, k) + ln_binomial(n - nc, n1 - k) - ln_total;
            (k, libm::exp(ln))
        })
        .collect()
}

/// Probability that `f_hat = 0` in a one-sided table.
pub fn prob_zero_compliance(table: &ScienceTable, p: f64) -> Result<f64> {
    let (n, n1, nc) = one_sided_counts(table, p)?;
    Ok(treated_complier_pmf(n, n1, nc)
        .iter()
        .find(|(k, _)| *k == 0)
        .map_or(0.0, |(_, pr)| *pr))
}

/// Exact bias of the Wald estimator under one-sided noncompliance,
/// `(1/(1-p)) (1 - E[1/f_hat] pi_c) (Ybar_c(0) - Ybar_n(0))`, with the
/// expectation of `1/f_hat` taken over assignments where `f_hat > 0`.
pub fn bias_one_sided_exact(table: &ScienceTable, p: f64, convention: UndefinedConvention) -> Result<f64> {
    let (n, n1, nc) = one_sided_counts(table, p)?;
    let pmf = treated_complier_pmf(n, n1, nc);
    let mut mass = 0.0;
    let mut inv = 0.0;
    for &(k, pr) in &pmf {
        if k == 0 {
            if pr > 0.0 && convention == UndefinedConvention::ErrorIfPositiveMass {
                return Err(Error::Infeasible(alloc::format!("f_hat = 0 with probability {pr}")));
            }
            continue;
        }
        mass += pr;
        inv += pr * n1 as f64 / k as f64;
    }
    let e_inv = inv / mass;
    let m = moments(table, p)?;
    let pi_c = nc as f64 / n as f64;
    Ok((1.0 - e_inv * pi_c) * m.delta() / (1.0 - p))
}

/// Source of the central moments of `f_hat` in the Taylor expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaylorMoments {
    /// Binomial approximation with `Np` trials.
    Binomial,
    /// Exact complete-randomization (hypergeometric) central moments.
    Hypergeometric,
}

/// Second to fourth central moments of `f_hat` under one-sided noncompliance.
pub fn f_hat_central_moments(m: &PopulationMoments, variant: TaylorMoments) -> (f64, f64, f64) {
    let pc = m.overall.pi_c;
    match variant {
        TaylorMoments::Binomial => {
            let t = m.p * m.n() as f64;
            let q = pc * (1.0 - pc);
            (
                q / t,
                q * (1.0 - 2.0 * pc) / (t * t),
                q * (1.0 + (3.0 * t - 6.0) * q) / (t * t * t),
            )
        }
        TaylorMoments::Hypergeometric => {
            let n = m.n();
            let nc = libm::round(pc * n as f64) as usize;
            let n1 = m.n1 as f64;
            let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
            for (k, pr) in treated_complier_pmf(n, m.n1, nc) {
                let e = k as f64 / n1 - pc;
                let e2 = e * e;
                m2 += pr * e2;
                m3 += pr * e2 * e;
                m4 += pr * e2 * e2;
            }
            (m2, m3, m4)
        }
    }
}

/// Fourth-order Taylor approximation of the one-sided Wald bias.
pub fn bias_one_sided_taylor(m: &PopulationMoments, variant: TaylorMoments) -> Result<f64> {
    if m.overall.pi_a > 0.0 {
        return Err(Error::TwoSidedInput);
    }
    require_compliers(m)?;
    let pc = m.overall.pi_c;
    let (m2, m3, m4) = f_hat_central_moments(m, variant);
    let pc2 = pc * pc;
    let series = m2 / (pc2 * pc) - m3 / (pc2 * pc2) + m4 / (pc2 * pc2 * pc);
    Ok(-(m.delta() / (1.0 - m.p)) * pc * series)
}

/// Second-order Taylor bias of the Wald estimator with always- and
/// never-takers.
pub fn bias_two_sided_taylor(m: &PopulationMoments) -> Result<f64> {
    require_compliers(m)?;
    let o = &m.overall;
    let p = m.p;
    let q = p * (1.0 - p);
    let lead = 1.0 / (o.pi_c * o.pi_c * (m.n() as f64 - 1.0));
    Ok(lead
        * (o.pi_n * ((1.0 - p) * o.pi_c + o.pi_a) / q * (o.ybar_n - o.ybar_c0)
            + o.pi_a * (p * o.pi_c + o.pi_n) / q * (o.ybar_c1 - o.ybar_a)))
}

/// Estimators available to the assignment oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleTarget {
    Itt,
    FHat,
    Iv,
    IvWithin,
    IvAcross,
}

/// Exact (or sampled) randomization distribution summary of an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssignmentExpectation {
    pub mean: f64,
    /// Population variance over the defined assignments.
    pub variance: f64,
    /// Probability mass of assignments where the estimator is undefined.
    pub undefined_mass: f64,
    pub assignments: usize,
}

fn evaluate(table: &ScienceTable, target: OracleTarget, z: &[bool]) -> Option<f64> {
    match target {
        OracleTarget::Itt | OracleTarget::FHat | OracleTarget::Iv => {
            let mut acc = [[0.0f64; 3]; 2];
            for (u, &zi) in table.units().iter().zip(z) {
                let a = &mut acc[usize::from(zi)];
                a[0] += 1.0;
                a[1] += u.y(zi);
                a[2] += f64::from(u8::from(u.d(zi)));
            }
            let itt = acc[1][1] / acc[1][0] - acc[0][1] / acc[0][0];
            let f = acc[1][2] / acc[1][0] - acc[0][2] / acc[0][0];
            match target {
                OracleTarget::Itt => Some(itt),
                OracleTarget::FHat => Some(f),
                _ => (f != 0.0).then(|| itt / f),
            }
        }
        OracleTarget::IvWithin | OracleTarget::IvAcross => {
            let sample = science_to_observed(table, z).ok()?;
            let r = if target == OracleTarget::IvWithin {
                estimators::iv_within(&sample)
            } else {
                estimators::iv_across(&sample)
            };
            r.ok().map(|r| r.estimate)
        }
    }
}

fn summarize(values: &[f64], total: usize, convention: UndefinedConvention) -> Result<AssignmentExpectation> {
    let undefined = total - values.len();
    if undefined > 0 && convention == UndefinedConvention::ErrorIfPositiveMass {
        return Err(Error::Infeasible(alloc::format!(
            "estimator undefined on {undefined} of {total} assignments"
        )));
    }
    if values.is_empty() {
        return Err(Error::Infeasible("estimator undefined on every assignment".into()));
    }
    let k = values.len() as f64;
    let mean = pairwise_sum(values) / k;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    Ok(AssignmentExpectation {
        mean,
        variance: pairwise_sum(&sq) / k,
        undefined_mass: undefined as f64 / total as f64,
        assignments: total,
    })
}

/// Exact mean and variance of an estimator over all `C(N, pN)` complete
/// randomizations.
pub fn enumerate_expectation(
    table: &ScienceTable,
    p: f64,
    target: OracleTarget,
    convention: UndefinedConvention,
) -> Result<AssignmentExpectation> {
    let n = table.len();
    let n1 = treated_count(n, p)?;
    let total = binomial_coefficient(n, n1);
    if total > ENUMERATION_LIMIT || n > 63 {
        return Err(Error::Infeasible(alloc::format!(
            "C({n}, {n1}) assignments exceed the enumeration limit"
        )));
    }
    let mut values = Vec::with_capacity(total as usize);
    let mut z = alloc::vec![false; n];
    // Gosper's hack walks every n-bit mask with exactly n1 bits set.
    let mut mask: u64 = (1u64 << n1) - 1;
    let end: u64 = 1u64 << n;
    let mut visited = 0usize;
    while mask < end {
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = mask >> i & 1 == 1;
        }
        visited += 1;
        if let Some(v) = evaluate(table, target, &z) {
            values.push(v);
        }
        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        mask = (((r ^ mask) >> 2) / c) | r;
    }
    summarize(&values, visited, convention)
}

/// Monte Carlo version of [`enumerate_expectation`] over `draws` random
/// complete randomizations.
pub fn sample_expectation(
    table: &ScienceTable,
    p: f64,
    target: OracleTarget,
    convention: UndefinedConvention,
    draws: usize,
    seed: u64,
) -> Result<AssignmentExpectation> {
    let n = table.len();
    let n1 = treated_count(n, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = alloc::vec![false; n];
    let mut values = Vec::with_capacity(draws);
    for _ in 0..draws {
        z.iter_mut().for_each(|v| *v = false);
        for i in rand::seq::index::sample(&mut rng, n, n1) {
            z[i] = true;
        }
        if let Some(v) = evaluate(table, target, &z) {
            values.push(v);
        }
    }
    summarize(&values, draws, convention)
}
