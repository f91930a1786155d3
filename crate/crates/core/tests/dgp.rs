use psiv_core::simulation::{generate_random_strata, replication_rng, Dgp, GridSpec, ScenarioConfig};

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

fn big(config: ScenarioConfig) -> psiv_core::ScienceTable {
    Dgp::from_scenario(&ScenarioConfig { n: 100_000, ..config })
        .unwrap()
        .generate(&mut replication_rng(7, 0))
        .unwrap()
}

#[test]
fn complier_share_and_outcome_variance_hit_targets() {
    for (pc, pcomp, py, shift) in [
        (0.05, false, false, 0.0),
        (0.10, true, true, 0.5),
        (0.075, true, false, -0.5),
    ] {
        let t = big(ScenarioConfig {
            target_pi_c: pc,
            predicts_compliance: pcomp,
            predicts_outcome: py,
            never_taker_shift: shift,
            ..ScenarioConfig::default()
        });
        let share = t.n_compliers() as f64 / t.len() as f64;
        let se = (pc * (1.0 - pc) / t.len() as f64).sqrt();
        assert!((share - pc).abs() < 4.0 * se, "compliance {share} vs {pc}");
        let y0: Vec<f64> = t.units().iter().map(|u| u.y0).collect();
        let (_, v) = mean_var(&y0);
        assert!((v - 1.0).abs() < 0.03, "var(y0) = {v}");
        assert!(t.is_one_sided());
    }
}

#[test]
fn outcome_prediction_puts_the_target_share_between_strata() {
    let t = big(ScenarioConfig {
        predicts_outcome: true,
        ..ScenarioConfig::default()
    });
    let mut by = vec![Vec::new(); 4];
    for u in t.units() {
        by[u.stratum].push(u.y0);
    }
    let n = t.len() as f64;
    let (grand, _) = mean_var(&t.units().iter().map(|u| u.y0).collect::<Vec<_>>());
    let between: f64 = by
        .iter()
        .map(|ys| {
            let (m, _) = mean_var(ys);
            ys.len() as f64 / n * (m - grand) * (m - grand)
        })
        .sum();
    assert!((between - 0.63).abs() < 0.02, "between-strata variance {between}");
}

#[test]
fn compliance_prediction_is_geometric() {
    let t = big(ScenarioConfig {
        predicts_compliance: true,
        target_pi_c: 0.10,
        ..ScenarioConfig::default()
    });
    let mut rates = [0.0; 4];
    let mut sizes = [0.0; 4];
    for u in t.units() {
        sizes[u.stratum] += 1.0;
        if u.d1 {
            rates[u.stratum] += 1.0;
        }
    }
    for g in 0..4 {
        rates[g] /= sizes[g];
    }
    assert!(rates[3] > 0.3, "{rates:?}");
    assert!(rates[0] < 0.01, "{rates:?}");
}

#[test]
fn random_strata_are_uniform() {
    let t = big(ScenarioConfig::default());
    let k = 6;
    let r = generate_random_strata(&t, k, &mut replication_rng(11, 3)).unwrap();
    let mut counts = vec![0.0; k];
    for u in r.units() {
        counts[u.stratum] += 1.0;
    }
    let expected = t.len() as f64 / k as f64;
    let chi2: f64 = counts.iter().map(|c| (c - expected) * (c - expected) / expected).sum();
    // 99.9% quantile of chi-square with 5 degrees of freedom.
    assert!(chi2 < 20.52, "chi2 = {chi2}");
    let units_kept = t
        .units()
        .iter()
        .zip(r.units())
        .all(|(a, b)| a.y0 == b.y0 && a.d1 == b.d1);
    assert!(units_kept);
}

#[test]
fn grid_has_216_distinct_cells() {
    let cells = GridSpec::default().expand();
    assert_eq!(cells.len(), 216);
    assert_eq!(cells[0].scenario_id, "s001");
    assert_eq!(cells[215].scenario_id, "s216");
    let mut seeds: Vec<u64> = cells.iter().map(|c| c.seed).collect();
    seeds.dedup();
    assert_eq!(seeds.len(), 216);
}
