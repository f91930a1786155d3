//! Small numeric helpers: deterministic summation and normal tail areas.

/// Pairwise (cascade) summation in a fixed order.
///
/// The recursion splits at the midpoint, so the result depends only on the
/// slice contents and never on how the values were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Mean via [`pairwise_sum`]; `None` for an empty slice.
pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| pairwise_sum(xs) / xs.len() as f64)
}

/// Two-sided standard-normal tail probability of `estimate / se`.
///
/// Returns `None` when `se` is not strictly positive and finite.
pub fn normal_two_sided_p(estimate: f64, se: f64) -> Option<f64> {
    if !(se > 0.0 && se.is_finite() && estimate.is_finite()) {
        return None;
    }
    let t = (estimate / se).abs();
    Some(libm::erfc(t / core::f64::consts::SQRT_2).clamp(0.0, 1.0))
}

/// `n` choose `k` as a float, exact while it fits in 53 bits.
pub fn binomial_coefficient(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut c = 1.0f64;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    libm::round(c)
}

/// `ln C(n, k)` via log-gamma.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        assert_eq!(mean(&xs), Some(500.5));
        assert_eq!(mean(&[]), None);
    }

    #[test]
    fn normal_tail_known_values() {
        let p = normal_two_sided_p(1.959_963_984_540_054, 1.0).unwrap();
        assert!((p - 0.05).abs() < 1e-12);
        assert_eq!(normal_two_sided_p(0.0, 1.0), Some(1.0));
        assert_eq!(normal_two_sided_p(1.0, 0.0), None);
        let q = normal_two_sided_p(-1.0, 1.0).unwrap();
        assert!((q - 0.317_310_507_862_914).abs() < 1e-12);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial_coefficient(8, 4), 70.0);
        assert_eq!(binomial_coefficient(20, 10), 184_756.0);
        assert_eq!(binomial_coefficient(3, 5), 0.0);
        assert!((libm::exp(ln_binomial(20, 10)) - 184_756.0).abs() < 1e-6);
    }
}
