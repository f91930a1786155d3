mod common;

use common::{close, one_sided_table};
use psiv_core::theory::{
    asyvar_iv, asyvar_iv_ps, bias_one_sided_exact, bias_one_sided_taylor, enumerate_expectation, moments,
    prob_zero_compliance, treated_complier_pmf, var_f, var_itt, OracleTarget, PsVarianceForm, TaylorMoments,
    UndefinedConvention,
};
use psiv_core::{ScienceTable, ScienceUnit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Finite-population variance `sum (x - mean)^2 / (N - 1)`.
fn s2(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

/// Randomization variance of a difference in means of potential outcomes
/// `(u0, u1)` under complete randomization of `n1` treated units.
fn neyman(u0: &[f64], u1: &[f64], n1: usize) -> f64 {
    let n = u0.len();
    let diff: Vec<f64> = u1.iter().zip(u0).map(|(a, b)| a - b).collect();
    s2(u1) / n1 as f64 + s2(u0) / (n - n1) as f64 - s2(&diff) / n as f64
}

fn two_sided_table(seed: u64, n: usize, strata: usize) -> ScienceTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let units = (0..n)
        .map(|i| {
            let u: f64 = rng.random();
            let (d0, d1) = if u < 0.3 {
                (false, true)
            } else if u < 0.5 {
                (true, true)
            } else {
                (false, false)
            };
            let y0: f64 = rng.random_range(-1.0..1.0) + (i % strata) as f64;
            let y1 = if d0 != d1 { y0 + rng.random_range(0.0..2.0) } else { y0 };
            ScienceUnit {
                y0,
                y1,
                d0,
                d1,
                stratum: i % strata,
            }
        })
        .collect();
    ScienceTable::new(units, (0..strata).map(|g| g.to_string()).collect()).unwrap()
}

fn modified(table: &ScienceTable, tau: f64, units: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let u = table.units();
    let f = |y: f64, d: bool| y - tau * if d { 1.0 } else { 0.0 };
    (
        units.iter().map(|&i| f(u[i].y0, u[i].d0)).collect(),
        units.iter().map(|&i| f(u[i].y1, u[i].d1)).collect(),
    )
}

#[test]
fn asymptotic_variance_is_modified_outcome_variance() {
    for seed in 0..20 {
        let t = two_sided_table(seed, 60, 1);
        let p = 0.5;
        let m = moments(&t, p).unwrap();
        let all: Vec<usize> = (0..t.len()).collect();
        let (u0, u1) = modified(&t, m.overall.cace, &all);
        let direct = neyman(&u0, &u1, 30) / (m.overall.pi_c * m.overall.pi_c);
        assert!(close(asyvar_iv(&m).unwrap(), direct, 1e-10), "seed {seed}");
    }
}

#[test]
fn itt_and_uptake_variances_match_direct_sums() {
    for seed in 0..10 {
        let t = two_sided_table(seed, 40, 1);
        let m = moments(&t, 0.25).unwrap();
        let y0: Vec<f64> = t.units().iter().map(|u| u.y0).collect();
        let y1: Vec<f64> = t.units().iter().map(|u| u.y1).collect();
        let d0: Vec<f64> = t.units().iter().map(|u| f64::from(u8::from(u.d0))).collect();
        let d1: Vec<f64> = t.units().iter().map(|u| f64::from(u8::from(u.d1))).collect();
        assert!(close(var_itt(&m), neyman(&y0, &y1, 10), 1e-12));
        assert!(close(var_f(&m), neyman(&d0, &d1, 10), 1e-12));
    }
}

#[test]
fn blocked_form_is_blocked_randomization_variance() {
    for seed in 0..20 {
        let t = two_sided_table(seed, 80, 4);
        let p = 0.5;
        let m = moments(&t, p).unwrap();
        let tau = m.overall.cace;
        let n = t.len() as f64;
        let mut total = 0.0;
        for g in 0..4 {
            let idx: Vec<usize> = (0..t.len()).filter(|&i| t.units()[i].stratum == g).collect();
            let (u0, u1) = modified(&t, tau, &idx);
            let ng = idx.len() as f64;
            total += (ng / n) * (ng / n) * neyman(&u0, &u1, idx.len() / 2);
        }
        let direct = total / (m.overall.pi_c * m.overall.pi_c);
        let v = asyvar_iv_ps(&m, PsVarianceForm::Blocked).unwrap();
        assert!(close(v, direct, 1e-10), "seed {seed}: {v} vs {direct}");
    }
}

#[test]
fn exact_factor_with_one_stratum_is_unstratified() {
    for seed in 0..10 {
        let t = two_sided_table(seed, 50, 1);
        let m = moments(&t, 0.4).unwrap();
        let a = asyvar_iv(&m).unwrap();
        let b = asyvar_iv_ps(&m, PsVarianceForm::ExactFactor).unwrap();
        assert!(close(a, b, 1e-12), "{a} vs {b}");
    }
}

#[test]
fn exact_bias_agrees_with_enumeration_on_small_tables() {
    for seed in 0..25 {
        let nc = 1 + (seed as usize % 6);
        let t = one_sided_table(seed, 8, nc, 1);
        let cace = t.true_cace().unwrap();
        let e = enumerate_expectation(&t, 0.5, OracleTarget::Iv, UndefinedConvention::Condition).unwrap();
        assert_eq!(e.assignments, 70);
        let exact = bias_one_sided_exact(&t, 0.5, UndefinedConvention::Condition).unwrap();
        assert!((e.mean - cace - exact).abs() <= 1e-12, "seed {seed}");
        let p0 = prob_zero_compliance(&t, 0.5).unwrap();
        assert!((e.undefined_mass - p0).abs() <= 1e-12);
    }
}

#[test]
fn f_and_its_reciprocal_covary_negatively() {
    for (n, nc) in [(8, 1), (8, 3), (20, 5), (50, 10), (200, 20)] {
        let n1 = n / 2;
        let pmf = treated_complier_pmf(n, n1, nc);
        let total: f64 = pmf.iter().map(|(_, q)| q).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let pos: Vec<(f64, f64)> = pmf
            .iter()
            .filter(|(k, _)| *k > 0)
            .map(|&(k, q)| (k as f64 / n1 as f64, q))
            .collect();
        let mass: f64 = pos.iter().map(|(_, q)| q).sum();
        let ef: f64 = pos.iter().map(|(f, q)| f * q).sum::<f64>() / mass;
        let einv: f64 = pos.iter().map(|(f, q)| q / f).sum::<f64>() / mass;
        assert!(1.0 - ef * einv <= 1e-12, "N={n} nc={nc}");
    }
}

#[test]
fn treated_complier_pmf_matches_counting() {
    let (n, n1, nc) = (10usize, 5usize, 3usize);
    let mut counts = [0usize; 4];
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == n1 {
            counts[(mask & 0b111).count_ones() as usize] += 1;
        }
    }
    for (k, q) in treated_complier_pmf(n, n1, nc) {
        assert!((q - counts[k] as f64 / 252.0).abs() < 1e-14);
    }
}

#[test]
fn hypergeometric_taylor_tracks_exact_bias() {
    for (seed, nc) in [(1u64, 20usize), (2, 40), (3, 60)] {
        let t = one_sided_table(seed, 200, nc, 1);
        let m = moments(&t, 0.5).unwrap();
        let exact = bias_one_sided_exact(&t, 0.5, UndefinedConvention::Condition).unwrap();
        let approx = bias_one_sided_taylor(&m, TaylorMoments::Hypergeometric).unwrap();
        assert!(
            (approx - exact).abs() <= 0.1 * exact.abs(),
            "nc={nc}: {approx} vs {exact}"
        );
    }
}
