mod common;

use common::{close, random_sample, stratum_moments};
use proptest::prelude::*;
use psiv_core::estimators::{
    iv_across, iv_dsf, iv_dss, iv_pwiv, iv_unstratified, iv_within, tsls_dummies, tsls_weighted, tsls_weighted_fit,
};
use psiv_core::variance::{se_bloom_ps, se_bloom_unstrat, se_delta_ps, se_delta_unstrat};
use psiv_core::{EstimatorConfig, ObservedSample, ObservedUnit, UnitRecord};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params() -> impl Strategy<Value = (u64, usize, usize, bool)> {
    (any::<u64>(), 20usize..=200, 1usize..=6, any::<bool>())
}

fn rebuild(s: &ObservedSample, f: impl Fn(&ObservedUnit) -> ObservedUnit) -> ObservedSample {
    ObservedSample::from_units(s.units().iter().map(f).collect(), s.labels().to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn within_form_equals_ratio_of_weighted_sums((seed, n, g, two) in params()) {
        let s = random_sample(seed, n, g, two);
        let moments = stratum_moments(&s);
        let total: f64 = moments.iter().map(|m| m.0).sum();
        let num: f64 = moments.iter().map(|(ng, itt, f)| ng / total * f * (itt / f)).sum();
        let den: f64 = moments.iter().map(|(ng, _, f)| ng / total * f).sum();
        let across_num: f64 = moments.iter().map(|(ng, itt, _)| ng / total * itt).sum();
        let w = iv_within(&s).unwrap().estimate;
        let a = iv_across(&s).unwrap().estimate;
        prop_assert!(close(w, num / den, 1e-10));
        prop_assert!(close(a, across_num / den, 1e-10));
        prop_assert!(close(w, a, 1e-10));
    }

    #[test]
    fn weighted_two_stage_matches_across((seed, n, g, two) in params()) {
        let s = random_sample(seed, n, g, two);
        let a = iv_across(&s).unwrap().estimate;
        prop_assert!(close(tsls_weighted(&s).unwrap(), a, 1e-9));
        let fit = tsls_weighted_fit(&s).unwrap();
        prop_assert!(close(fit.first_slope, iv_across(&s).unwrap().f_hat, 1e-9));
    }

    #[test]
    fn affine_outcome_maps_estimates_and_ses((seed, n, g, two) in params(), a in -5.0f64..5.0, b in 0.1f64..4.0, flip in any::<bool>()) {
        let s = random_sample(seed, n, g, two);
        let b = if flip { -b } else { b };
        let t = rebuild(&s, |u| ObservedUnit { y: a + b * u.y, ..*u });
        let cfg = EstimatorConfig::default();
        let pairs = [
            (iv_unstratified(&s), iv_unstratified(&t)),
            (iv_within(&s), iv_within(&t)),
            (iv_across(&s), iv_across(&t)),
            (iv_dss(&s, &cfg), iv_dss(&t, &cfg)),
            (iv_pwiv(&s), iv_pwiv(&t)),
        ];
        for (x, y) in pairs {
            let (x, y) = match (x, y) {
                (Ok(x), Ok(y)) => (x, y),
                (Err(x), Err(y)) => {
                    prop_assert_eq!(x, y);
                    continue;
                }
                (x, y) => return Err(TestCaseError::fail(format!("{x:?} vs {y:?}"))),
            };
            prop_assert!((y.estimate - b * x.estimate).abs() <= 1e-8 * (1.0 + x.estimate.abs() * b.abs()));
            for (sx, sy) in [(x.se_bloom, y.se_bloom), (x.se_delta, y.se_delta)] {
                if let (Some(sx), Some(sy)) = (sx, sy) {
                    prop_assert!((sy - b.abs() * sx).abs() <= 1e-8 * (1.0 + sx * b.abs()));
                }
            }
        }
    }

    #[test]
    fn single_stratum_collapses_exactly((seed, n, _g, two) in params()) {
        let s = random_sample(seed, n, 1, two);
        let u = iv_unstratified(&s).unwrap();
        prop_assert_eq!(iv_within(&s).unwrap().estimate, u.estimate);
        prop_assert_eq!(iv_across(&s).unwrap().estimate, u.estimate);
        prop_assert_eq!(se_bloom_ps(&s, &[0]).unwrap(), se_bloom_unstrat(&s).unwrap());
        prop_assert_eq!(se_delta_ps(&s, &[0], u.estimate).unwrap(), se_delta_unstrat(&s).unwrap());
    }

    #[test]
    fn full_compliance_delta_equals_bloom((seed, n, g, _two) in params()) {
        let s = random_sample(seed, n, g, false);
        let t = rebuild(&s, |u| ObservedUnit { d: u.z, ..*u });
        let r = iv_unstratified(&t).unwrap();
        prop_assert_eq!(r.se_delta, r.se_bloom);
        prop_assert_eq!(r.f_hat, 1.0);
        let w = iv_within(&t).unwrap();
        prop_assert_eq!(w.se_delta, w.se_bloom);
    }

    #[test]
    fn unit_order_does_not_matter((seed, n, g, two) in params()) {
        let s = random_sample(seed, n, g, two);
        let mut units = s.units().to_vec();
        units.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        let t = ObservedSample::from_units(units, s.labels().to_vec()).unwrap();
        let cfg = EstimatorConfig::default();
        let pairs = [
            (iv_within(&s), iv_within(&t)),
            (iv_dsf(&s, &cfg), iv_dsf(&t, &cfg)),
            (iv_pwiv(&s), iv_pwiv(&t)),
            (tsls_dummies(&s), tsls_dummies(&t)),
        ];
        for (x, y) in pairs {
            match (x, y) {
                (Ok(x), Ok(y)) => {
                    prop_assert!(close(y.estimate, x.estimate, 1e-9));
                    prop_assert_eq!(x.strata_kept, y.strata_kept);
                }
                (Err(x), Err(y)) => prop_assert_eq!(x, y),
                (x, y) => prop_assert!(false, "{:?} vs {:?}", x, y),
            }
        }
    }

    #[test]
    fn dss_with_zero_threshold_is_within((seed, n, g, two) in params()) {
        let s = random_sample(seed, n, g, two);
        let cfg = EstimatorConfig { dss_threshold: 0.0, ..EstimatorConfig::default() };
        let d = iv_dss(&s, &cfg);
        let w = iv_within(&s).unwrap();
        if let Ok(d) = d {
            if d.strata_kept.len() == s.num_strata() {
                prop_assert_eq!(d.estimate, w.estimate);
            }
        }
    }
}

fn stratum(rows: &[(i64, i64, f64)], label: &str) -> Vec<UnitRecord> {
    rows.iter().map(|&(z, d, y)| UnitRecord::new(z, d, y, label)).collect()
}

#[test]
fn precision_weights_equal_gives_plain_mean() {
    let base = [(1, 1, 3.0), (1, 0, 1.0), (0, 0, 2.0), (0, 0, 0.0)];
    let mirrored: Vec<(i64, i64, f64)> = base.iter().map(|&(z, d, y)| (z, d, -y)).collect();
    let mut records = stratum(&base, "a");
    records.extend(stratum(&mirrored, "b"));
    let s = ObservedSample::validate(records).unwrap();
    let r = iv_pwiv(&s).unwrap();
    let tau: Vec<f64> = stratum_moments(&s).iter().map(|(_, itt, f)| itt / f).collect();
    assert_eq!(tau[0], -tau[1]);
    assert!(close(r.estimate, (tau[0] + tau[1]) / 2.0, 1e-12));
}

#[test]
fn precision_weights_hundred_to_one() {
    // Stratum b repeats stratum a's outcomes scaled by 10, so its ITT variance
    // is 100 times larger at equal compliance.
    let a = [(1, 1, 3.0), (1, 0, 1.0), (0, 0, 2.0), (0, 0, 0.0)];
    let b: Vec<(i64, i64, f64)> = a.iter().map(|&(z, d, y)| (z, d, 10.0 * y + 1.0)).collect();
    let mut records = stratum(&a, "a");
    records.extend(stratum(&b, "b"));
    let s = ObservedSample::validate(records).unwrap();
    let tau: Vec<f64> = stratum_moments(&s).iter().map(|(_, itt, f)| itt / f).collect();
    let r = iv_pwiv(&s).unwrap();
    assert!(close(r.estimate, (100.0 * tau[0] + tau[1]) / 101.0, 1e-12));
    // Bloom variance of stratum a is 8, of stratum b 800.
    let z: f64 = 1.0 / 8.0 + 1.0 / 800.0;
    assert!(close(r.se_bloom.unwrap(), (1.0 / z).sqrt(), 1e-12));
}
