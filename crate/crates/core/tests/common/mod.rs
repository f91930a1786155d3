#![allow(dead_code)]

use psiv_core::{ObservedSample, ScienceTable, ScienceUnit, UnitRecord};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Random valid sample with `g` strata, at least two units per arm in every
/// stratum and nonzero estimated compliance in every stratum.
pub fn random_sample(seed: u64, n: usize, g: usize, two_sided: bool) -> ObservedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut sizes = vec![4usize; g];
        for _ in 0..n.saturating_sub(4 * g) {
            sizes[rng.random_range(0..g)] += 1;
        }
        let mut records = Vec::with_capacity(n);
        for (k, &size) in sizes.iter().enumerate() {
            let n1 = rng.random_range(2..=size - 2);
            let mut z: Vec<bool> = (0..size).map(|i| i < n1).collect();
            z.shuffle(&mut rng);
            let pc: f64 = rng.random_range(0.1..0.9);
            let pa: f64 = if two_sided {
                rng.random_range(0.0..(1.0 - pc))
            } else {
                0.0
            };
            let shift: f64 = rng.random_range(-2.0..2.0);
            for &zi in &z {
                let u: f64 = rng.random();
                let d = if u < pa {
                    true
                } else if u < pa + pc {
                    zi
                } else {
                    false
                };
                let e: f64 = StandardNormal.sample(&mut rng);
                let y = shift + e + if d { 1.5 } else { 0.0 };
                records.push(UnitRecord::new(i64::from(zi), i64::from(d), y, format!("g{k}")));
            }
        }
        let s = ObservedSample::validate(records).expect("generated sample is valid");
        if s.summaries().iter().all(|x| x.f_hat != 0.0) {
            return s;
        }
    }
}

/// Per-stratum `(N_g, ITT_g, f_g)` computed straight from the units.
pub fn stratum_moments(s: &ObservedSample) -> Vec<(f64, f64, f64)> {
    let g = s.num_strata();
    let mut acc = vec![[0.0f64; 6]; g];
    for u in s.units() {
        let a = &mut acc[u.stratum];
        let arm = if u.z { 0 } else { 3 };
        a[arm] += 1.0;
        a[arm + 1] += u.y;
        a[arm + 2] += if u.d { 1.0 } else { 0.0 };
    }
    acc.iter()
        .map(|a| {
            let itt = a[1] / a[0] - a[4] / a[3];
            let f = a[2] / a[0] - a[5] / a[3];
            (a[0] + a[3], itt, f)
        })
        .collect()
}

/// Random one-sided science table of `n` units with `nc` compliers.
pub fn one_sided_table(seed: u64, n: usize, nc: usize, strata: usize) -> ScienceTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut complier: Vec<bool> = (0..n).map(|i| i < nc).collect();
    complier.shuffle(&mut rng);
    let units = complier
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let y0: f64 = rng.random_range(-2.0..2.0);
            let tau: f64 = rng.random_range(-1.0..3.0);
            ScienceUnit {
                y0,
                y1: if c { y0 + tau } else { y0 },
                d0: false,
                d1: c,
                stratum: i % strata,
            }
        })
        .collect();
    ScienceTable::new(units, (0..strata).map(|g| g.to_string()).collect()).unwrap()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}
