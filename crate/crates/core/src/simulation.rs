//! Data-generating process and Monte Carlo engine.
//!
//! A replication is a pure function of `(scenario, seed, replication index)`:
//! its generator is ChaCha8 seeded from the scenario seed with the
//! replication index as the stream id. Replications can therefore be run in
//! any order or in parallel, and [`aggregate`] reduces them in replication
//! order with fixed-order pairwise sums, so metrics are bit-identical
//! regardless of scheduling.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{science_to_observed, Method, ObservedSample, ScienceTable, ScienceUnit};
use crate::error::{Error, Result};
use crate::estimators::{self, EstimatorConfig};
use crate::stats::pairwise_sum;

/// Generator family tag written next to every metrics row.
pub const RNG_FAMILY: &str = "chacha8-stream-v1";

/// Estimators evaluated in every replication, in output order.
pub const SIM_METHODS: [Method; 8] = [
    Method::Unstratified,
    Method::IvWithin,
    Method::IvAcross,
    Method::DropSmallStrata,
    Method::DropSmallF,
    Method::PrecisionWeighted,
    Method::TslsDummies,
    Method::Oracle,
];

/// One cell of the main simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    pub n: usize,
    pub target_pi_c: f64,
    pub predicts_compliance: bool,
    pub predicts_outcome: bool,
    pub never_taker_shift: f64,
    pub heterogeneous_tau: bool,
    pub p_treat: f64,
    pub replications: usize,
    pub seed: u64,
    pub num_strata: usize,
    /// Geometric ratio of stratum compliance when `predicts_compliance`.
    pub compliance_ratio: f64,
    /// Homogeneous complier effect.
    pub tau: f64,
    /// Heterogeneous effects are `tau_het_start - tau_het_step * g`.
    pub tau_het_start: f64,
    pub tau_het_step: f64,
    /// Between-stratum variance of control means when `predicts_outcome`.
    pub between_variance: f64,
    pub estimators: EstimatorConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario_id: "s000".to_string(),
            n: 1000,
            target_pi_c: 0.10,
            predicts_compliance: false,
            predicts_outcome: false,
            never_taker_shift: 0.0,
            heterogeneous_tau: false,
            p_treat: 0.5,
            replications: 1000,
            seed: 20_240_601,
            num_strata: 4,
            compliance_ratio: 0.1,
            tau: 0.5,
            tau_het_start: 0.8,
            tau_het_step: 0.2,
            between_variance: 0.63,
            estimators: EstimatorConfig::default(),
        }
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidConfig(msg)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_pi_c > 0.0 && self.target_pi_c < 1.0) {
            return Err(invalid(alloc::format!(
                "target_pi_c must lie in (0, 1), got {}",
                self.target_pi_c
            )));
        }
        if self.replications == 0 {
            return Err(invalid("replications must be at least 1".into()));
        }
        if self.num_strata == 0 {
            return Err(invalid("num_strata must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.compliance_ratio) {
            return Err(invalid(alloc::format!(
                "compliance_ratio must lie in [0, 1], got {}",
                self.compliance_ratio
            )));
        }
        if !(0.0..1.0).contains(&self.between_variance) {
            return Err(invalid(alloc::format!(
                "between_variance must lie in [0, 1), got {}",
                self.between_variance
            )));
        }
        if !self.never_taker_shift.is_finite() || !self.tau.is_finite() {
            return Err(invalid("never_taker_shift and tau must be finite".into()));
        }
        crate::theory::treated_count(self.n, self.p_treat)?;
        if self.n < 4 {
            return Err(Error::SampleTooSmall(self.n));
        }
        self.estimators.validate()
    }

    fn equal_weights(&self) -> Vec<f64> {
        alloc::vec![1.0 / self.num_strata as f64; self.num_strata]
    }

    fn tau_profile(&self, k: usize) -> Vec<f64> {
        (0..k)
            .map(|g| {
                if self.heterogeneous_tau {
                    self.tau_het_start - self.tau_het_step * g as f64
                } else {
                    self.tau
                }
            })
            .collect()
    }
}

/// Geometric compliance profile `(p r^{K-1}, ..., p r, p)` scaled so that
/// `sum_k w_k p_k = target`.
pub fn geometric_compliance(weights: &[f64], r: f64, target: f64) -> Result<Vec<f64>> {
    let k = weights.len();
    let shape: Vec<f64> = (0..k).map(|g| libm::pow(r, (k - 1 - g) as f64)).collect();
    let norm: f64 = weights.iter().zip(&shape).map(|(w, s)| w * s).sum();
    if norm <= 0.0 {
        return Err(Error::Infeasible("compliance profile has zero mass".into()));
    }
    let p = target / norm;
    let probs: Vec<f64> = shape.iter().map(|s| p * s).collect();
    for (stratum, &probability) in probs.iter().enumerate() {
        if probability > 1.0 + 1e-12 {
            return Err(Error::InfeasibleCompliance { stratum, probability });
        }
    }
    Ok(probs.into_iter().map(|v| v.min(1.0)).collect())
}

/// Fully specified population model for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dgp {
    pub n: usize,
    pub stratum_weights: Vec<f64>,
    pub compliance: Vec<f64>,
    pub control_means: Vec<f64>,
    pub never_taker_shift: f64,
    pub noise_sd: f64,
    pub tau: Vec<f64>,
}

impl Dgp {
    fn build(
        n: usize,
        weights: Vec<f64>,
        compliance: Vec<f64>,
        predicts_outcome: bool,
        between_variance: f64,
        never_taker_shift: f64,
        tau: Vec<f64>,
    ) -> Result<Self> {
        let k = weights.len();
        let center: f64 = weights.iter().enumerate().map(|(g, w)| w * g as f64).sum();
        let spread: f64 = weights
            .iter()
            .enumerate()
            .map(|(g, w)| w * (g as f64 - center) * (g as f64 - center))
            .sum();
        let control_means: Vec<f64> = if predicts_outcome && spread > 0.0 {
            let c = libm::sqrt(between_variance / spread);
            (0..k).map(|g| c * (g as f64 - center)).collect()
        } else {
            alloc::vec![0.0; k]
        };
        // Variance of the systematic part mu_g + shift * 1[never-taker].
        let s = never_taker_shift;
        let (mut m1, mut m2) = (0.0, 0.0);
        for g in 0..k {
            let (w, pc, mu) = (weights[g], compliance[g], control_means[g]);
            m1 += w * (mu + s * (1.0 - pc));
            m2 += w * ((1.0 - pc) * (mu + s) * (mu + s) + pc * mu * mu);
        }
        let resid = 1.0 - (m2 - m1 * m1);
        if resid <= 0.0 {
            return Err(invalid(alloc::format!(
                "systematic outcome variance {} leaves no room for noise",
                m2 - m1 * m1
            )));
        }
        Ok(Self {
            n,
            stratum_weights: weights,
            compliance,
            control_means,
            never_taker_shift,
            noise_sd: libm::sqrt(resid),
            tau,
        })
    }

    pub fn from_scenario(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let weights = config.equal_weights();
        let compliance = if config.predicts_compliance {
            geometric_compliance(&weights, config.compliance_ratio, config.target_pi_c)?
        } else {
            alloc::vec![config.target_pi_c; config.num_strata]
        };
        Self::build(
            config.n,
            weights,
            compliance,
            config.predicts_outcome,
            config.between_variance,
            config.never_taker_shift,
            config.tau_profile(config.num_strata),
        )
    }

    pub fn from_concentration(config: &ConcentrationConfig) -> Result<Self> {
        config.validate()?;
        let s = &config.scenario;
        let compliance = geometric_compliance(&config.stratum_weights, config.r, config.target_p)?;
        Self::build(
            s.n,
            config.stratum_weights.clone(),
            compliance,
            s.predicts_outcome,
            s.between_variance,
            s.never_taker_shift,
            s.tau_profile(config.stratum_weights.len()),
        )
    }

    /// Draws one potential-outcome table. Per unit, in order: stratum,
    /// compliance coin, control-outcome noise.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ScienceTable> {
        let k = self.stratum_weights.len();
        let mut cumulative = Vec::with_capacity(k);
        let mut acc = 0.0;
        for w in &self.stratum_weights {
            acc += w;
            cumulative.push(acc);
        }
        let mut units = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let u: f64 = rng.random::<f64>() * acc;
            let g = cumulative.iter().position(|&c| u < c).unwrap_or(k - 1);
            let complier = rng.random::<f64>() < self.compliance[g];
            let eps: f64 = StandardNormal.sample(rng);
            let mut y0 = self.control_means[g] + self.noise_sd * eps;
            if !complier {
                y0 += self.never_taker_shift;
            }
            let y1 = if complier { y0 + self.tau[g] } else { y0 };
            units.push(ScienceUnit {
                y0,
                y1,
                d0: false,
                d1: complier,
                stratum: g,
            });
        }
        ScienceTable::new(units, (0..k).map(|g| g.to_string()).collect())
    }
}

pub fn generate_science_table<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<ScienceTable> {
    Dgp::from_scenario(config)?.generate(rng)
}

/// Compliance-concentration study: stratum compliance `(p r^3, p r^2, p r, p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationConfig {
    pub r: f64,
    #[serde(rename = "target_P")]
    pub target_p: f64,
    pub stratum_weights: Vec<f64>,
    #[serde(flatten)]
    pub scenario: ScenarioConfig,
}

impl ConcentrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(invalid(alloc::format!("r must lie in [0, 1], got {}", self.r)));
        }
        if !(self.target_p > 0.0 && self.target_p < 1.0) {
            return Err(invalid(alloc::format!(
                "target_P must lie in (0, 1), got {}",
                self.target_p
            )));
        }
        if self.stratum_weights.is_empty() || self.stratum_weights.iter().any(|w| w.is_nan() || *w <= 0.0) {
            return Err(invalid("stratum_weights must be non-empty and positive".into()));
        }
        let total: f64 = self.stratum_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(alloc::format!("stratum_weights sum to {total}, not 1")));
        }
        let mut s = self.scenario.clone();
        s.target_pi_c = self.target_p;
        s.num_strata = self.stratum_weights.len();
        s.validate()
    }
}

pub fn generate_concentration_table<R: Rng + ?Sized>(
    config: &ConcentrationConfig,
    rng: &mut R,
) -> Result<ScienceTable> {
    Dgp::from_concentration(config)?.generate(rng)
}

/// Replaces the strata of `table` with `k` uniformly random labels.
pub fn generate_random_strata<R: Rng + ?Sized>(table: &ScienceTable, k: usize, rng: &mut R) -> Result<ScienceTable> {
    if k == 0 {
        return Err(invalid("k must be at least 1".into()));
    }
    let strata: Vec<usize> = (0..table.len()).map(|_| rng.random_range(0..k)).collect();
    table.relabel(&strata, (0..k).map(|g| g.to_string()).collect())
}

/// Random-stratification study: a main-grid population relabeled with `k`
/// random strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomStrataConfig {
    pub k: usize,
    #[serde(flatten)]
    pub scenario: ScenarioConfig,
}

/// Any of the three simulation studies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Study {
    Grid(ScenarioConfig),
    Concentration(ConcentrationConfig),
    RandomStrata(RandomStrataConfig),
}

impl Study {
    pub fn scenario(&self) -> &ScenarioConfig {
        match self {
            Study::Grid(c) => c,
            Study::Concentration(c) => &c.scenario,
            Study::RandomStrata(c) => &c.scenario,
        }
    }

    pub fn replications(&self) -> usize {
        self.scenario().replications
    }

    pub fn target_pi_c(&self) -> f64 {
        match self {
            Study::Concentration(c) => c.target_p,
            _ => self.scenario().target_pi_c,
        }
    }

    /// Validates the configuration and builds its reusable population model.
    pub fn prepare(&self) -> Result<PreparedStudy> {
        let dgp = match self {
            Study::Grid(c) => Dgp::from_scenario(c)?,
            Study::Concentration(c) => Dgp::from_concentration(c)?,
            Study::RandomStrata(c) => {
                if c.k == 0 {
                    return Err(invalid("k must be at least 1".into()));
                }
                Dgp::from_scenario(&c.scenario)?
            }
        };
        let random_k = match self {
            Study::RandomStrata(c) => Some(c.k),
            _ => None,
        };
        let s = self.scenario();
        Ok(PreparedStudy {
            dgp,
            random_k,
            n1: crate::theory::treated_count(s.n, s.p_treat)?,
            seed: s.seed,
            estimators: s.estimators,
        })
    }
}

/// A validated study ready to run replications.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedStudy {
    pub dgp: Dgp,
    random_k: Option<usize>,
    n1: usize,
    seed: u64,
    estimators: EstimatorConfig,
}

/// One estimator's output in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorDraw {
    pub estimate: f64,
    pub se_bloom: Option<f64>,
    pub se_delta: Option<f64>,
    pub n_used: usize,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationOutcome {
    /// Realized CACE of the replication's table; `None` without compliers.
    pub true_cace: Option<f64>,
    /// Indexed like [`SIM_METHODS`]; `None` marks a failed estimator.
    pub draws: [Option<EstimatorDraw>; SIM_METHODS.len()],
}

/// Generator for replication `rep` of a scenario seeded with `seed`.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn draw_from(r: &crate::data::EstimateReport, g_count: usize) -> EstimatorDraw {
    EstimatorDraw {
        estimate: r.estimate,
        se_bloom: r.se_bloom.or(r.se_conventional),
        se_delta: r.se_delta.or(r.se_conventional),
        n_used: r.n_used,
        dropped: r.strata_kept.len() < g_count,
    }
}

impl PreparedStudy {
    /// Runs replication `rep`. Estimator failures are recorded in the
    /// outcome; only configuration errors are returned.
    pub fn replicate(&self, rep: usize) -> Result<ReplicationOutcome> {
        let mut rng = replication_rng(self.seed, rep);
        let mut table = self.dgp.generate(&mut rng)?;
        if let Some(k) = self.random_k {
            table = generate_random_strata(&table, k, &mut rng)?;
        }
        let mut z = alloc::vec![false; table.len()];
        for i in rand::seq::index::sample(&mut rng, table.len(), self.n1) {
            z[i] = true;
        }
        let mut draws = [None; SIM_METHODS.len()];
        let true_cace = table.true_cace();
        if true_cace.is_none() {
            return Ok(ReplicationOutcome { true_cace, draws });
        }
        let g_count = table.num_strata();
        let stratified = science_to_observed(&table, &z);
        let collapsed;
        let pooled = match &stratified {
            Ok(s) => s,
            Err(Error::EmptyArm { .. }) => {
                collapsed = collapse(&table, &z)?;
                &collapsed
            }
            Err(e) => return Err(e.clone()),
        };
        for (slot, method) in draws.iter_mut().zip(SIM_METHODS) {
            let report = match method {
                Method::Unstratified => estimators::iv_unstratified(pooled),
                Method::Oracle => estimators::oracle_complier_dim(&table, &z),
                m => match &stratified {
                    Ok(s) => estimators::estimate(m, s, &self.estimators),
                    Err(e) => Err(e.clone()),
                },
            };
            *slot = report.ok().map(|r| draw_from(&r, g_count));
        }
        Ok(ReplicationOutcome { true_cace, draws })
    }
}

fn collapse(table: &ScienceTable, z: &[bool]) -> Result<ObservedSample> {
    let units = table
        .units()
        .iter()
        .zip(z)
        .map(|(u, &zi)| crate::data::ObservedUnit {
            z: zi,
            d: u.d(zi),
            y: u.y(zi),
            stratum: 0,
        })
        .collect();
    ObservedSample::from_units(units, alloc::vec!["all".to_string()])
}

/// Monte Carlo performance of one estimator in one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioMetrics {
    pub scenario_id: String,
    pub n: usize,
    pub pi_c_target: f64,
    pub predicts_c: bool,
    pub predicts_y: bool,
    pub nt_shift: f64,
    pub het_tau: bool,
    pub estimator: Method,
    /// Mean of `estimate - true CACE`.
    pub bias: Option<f64>,
    /// Standard deviation of `estimate - true CACE` (divisor R).
    pub true_se: Option<f64>,
    pub rmse: Option<f64>,
    pub cal_bloom: Option<f64>,
    pub cal_delta: Option<f64>,
    pub rel_instab_bloom: Option<f64>,
    pub rel_instab_delta: Option<f64>,
    pub drop_rate: f64,
    pub fail_rate: f64,
    pub mean_n_used: Option<f64>,
    pub seed: u64,
    pub rng_family: String,
}

fn mean_of(xs: &[f64]) -> Option<f64> {
    crate::stats::mean(xs)
}

fn sd_of(xs: &[f64]) -> Option<f64> {
    let m = mean_of(xs)?;
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    Some(libm::sqrt(pairwise_sum(&sq) / xs.len() as f64))
}

#[derive(Default)]
struct MethodStats {
    bias: Option<f64>,
    true_se: Option<f64>,
    rmse: Option<f64>,
    cal: [Option<f64>; 2],
    instab: [Option<f64>; 2],
    drop_rate: f64,
    fail_rate: f64,
    mean_n_used: Option<f64>,
}

fn method_stats(outcomes: &[ReplicationOutcome], idx: usize) -> MethodStats {
    let mut errors = Vec::new();
    let mut ses: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut n_used = Vec::new();
    let mut dropped = 0usize;
    for o in outcomes {
        if let (Some(truth), Some(d)) = (o.true_cace, o.draws[idx]) {
            errors.push(d.estimate - truth);
            n_used.push(d.n_used as f64);
            if d.dropped {
                dropped += 1;
            }
            for (v, se) in ses.iter_mut().zip([d.se_bloom, d.se_delta]) {
                if let Some(s) = se {
                    v.push(s);
                }
            }
        }
    }
    let reps = outcomes.len() as f64;
    let bias = mean_of(&errors);
    let true_se = sd_of(&errors);
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let rmse = mean_of(&sq).map(libm::sqrt);
    let mut cal = [None; 2];
    let mut instab = [None; 2];
    for k in 0..2 {
        let sq: Vec<f64> = ses[k].iter().map(|s| s * s).collect();
        if let (Some(ms), Some(t)) = (mean_of(&sq), true_se) {
            if t > 0.0 {
                cal[k] = Some(libm::sqrt(ms) / t);
                instab[k] = sd_of(&ses[k]).map(|s| s / t);
            }
        }
    }
    MethodStats {
        bias,
        true_se,
        rmse,
        cal,
        instab,
        drop_rate: dropped as f64 / reps,
        fail_rate: (outcomes.len() - errors.len()) as f64 / reps,
        mean_n_used: mean_of(&n_used),
    }
}

/// Reduces replication outcomes (in replication order) to one metrics row
/// per estimator in [`SIM_METHODS`] order.
pub fn aggregate(study: &Study, id: &str, outcomes: &[ReplicationOutcome]) -> Vec<ScenarioMetrics> {
    let s = study.scenario();
    let stats: Vec<MethodStats> = (0..SIM_METHODS.len()).map(|i| method_stats(outcomes, i)).collect();
    let base = &stats[0];
    let ratio = |own: Option<f64>, b: Option<f64>| match (own, b) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    SIM_METHODS
        .iter()
        .zip(&stats)
        .map(|(&method, st)| ScenarioMetrics {
            scenario_id: id.to_string(),
            n: s.n,
            pi_c_target: study.target_pi_c(),
            predicts_c: match study {
                Study::Concentration(_) => true,
                _ => s.predicts_compliance,
            },
            predicts_y: s.predicts_outcome,
            nt_shift: s.never_taker_shift,
            het_tau: s.heterogeneous_tau,
            estimator: method,
            bias: st.bias,
            true_se: st.true_se,
            rmse: st.rmse,
            cal_bloom: st.cal[0],
            cal_delta: st.cal[1],
            rel_instab_bloom: ratio(st.instab[0], base.instab[0]),
            rel_instab_delta: ratio(st.instab[1], base.instab[1]),
            drop_rate: st.drop_rate,
            fail_rate: st.fail_rate,
            mean_n_used: st.mean_n_used,
            seed: s.seed,
            rng_family: RNG_FAMILY.to_string(),
        })
        .collect()
}

/// Identifier written in the `scenario_id` column.
pub fn study_id(study: &Study) -> String {
    match study {
        Study::Grid(c) => c.scenario_id.clone(),
        Study::Concentration(c) => alloc::format!("r{}", c.r),
        Study::RandomStrata(c) => alloc::format!("k{}", c.k),
    }
}

/// Runs every replication sequentially and aggregates.
pub fn run_study(study: &Study) -> Result<Vec<ScenarioMetrics>> {
    let prepared = study.prepare()?;
    let outcomes = (0..study.replications())
        .map(|r| prepared.replicate(r))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(study, &study_id(study), &outcomes))
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<Vec<ScenarioMetrics>> {
    run_study(&Study::Grid(config.clone()))
}

/// Runs each scenario in turn; one row per (scenario, estimator).
pub fn run_grid(configs: &[ScenarioConfig]) -> Result<Vec<ScenarioMetrics>> {
    let mut out = Vec::with_capacity(configs.len() * SIM_METHODS.len());
    for c in configs {
        out.extend(run_scenario(c)?);
    }
    Ok(out)
}

/// Factor levels of the main grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub n: Vec<usize>,
    pub target_pi_c: Vec<f64>,
    pub predicts_compliance: Vec<bool>,
    pub predicts_outcome: Vec<bool>,
    pub never_taker_shift: Vec<f64>,
    pub heterogeneous_tau: Vec<bool>,
    /// Settings shared by every cell; its `scenario_id` and factor fields are
    /// overwritten.
    pub base: ScenarioConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n: alloc::vec![500, 1000, 2000],
            target_pi_c: alloc::vec![0.05, 0.075, 0.10],
            predicts_compliance: alloc::vec![false, true],
            predicts_outcome: alloc::vec![false, true],
            never_taker_shift: alloc::vec![-0.5, 0.0, 0.5],
            heterogeneous_tau: alloc::vec![false, true],
            base: ScenarioConfig::default(),
        }
    }
}

impl GridSpec {
    /// Expands the factorial grid. Cell `i` (1-based) gets id `s{i:03}` and
    /// seed `base.seed + i`.
    pub fn expand(&self) -> Vec<ScenarioConfig> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &pc in &self.target_pi_c {
                for &pcomp in &self.predicts_compliance {
                    for &py in &self.predicts_outcome {
                        for &shift in &self.never_taker_shift {
                            for &het in &self.heterogeneous_tau {
                                let i = out.len() + 1;
                                out.push(ScenarioConfig {
                                    scenario_id: alloc::format!("s{i:03}"),
                                    n,
                                    target_pi_c: pc,
                                    predicts_compliance: pcomp,
                                    predicts_outcome: py,
                                    never_taker_shift: shift,
                                    heterogeneous_tau: het,
                                    seed: self.base.seed.wrapping_add(i as u64),
                                    ..self.base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_profile_matches_hand_arithmetic() {
        let w = [0.25; 4];
        let p = geometric_compliance(&w, 0.5, 0.15).unwrap();
        assert!((p[3] - 0.32).abs() < 1e-15);
        assert!((p[0] - 0.04).abs() < 1e-15);
        let flat = geometric_compliance(&w, 1.0, 0.15).unwrap();
        assert!(flat.iter().all(|&v| (v - 0.15).abs() < 1e-15));
        let corner = geometric_compliance(&w, 0.0, 0.15).unwrap();
        assert_eq!(&corner[..3], &[0.0, 0.0, 0.0]);
        assert!((corner[3] - 0.6).abs() < 1e-15);
        assert!(matches!(
            geometric_compliance(&w, 0.0, 0.3),
            Err(Error::InfeasibleCompliance { stratum: 3, .. })
        ));
    }

    #[test]
    fn full_grid_has_216_cells() {
        let cells = GridSpec::default().expand();
        assert_eq!(cells.len(), 216);
        assert_eq!(cells[0].scenario_id, "s001");
        assert_eq!(cells[215].scenario_id, "s216");
    }

    #[test]
    fn equal_means_without_outcome_prediction() {
        let dgp = Dgp::from_scenario(&ScenarioConfig::default()).unwrap();
        assert!(dgp.control_means.iter().all(|&m| m == 0.0));
        let pred = Dgp::from_scenario(&ScenarioConfig {
            predicts_outcome: true,
            ..Default::default()
        })
        .unwrap();
        let between: f64 = pred.control_means.iter().map(|m| m * m / 4.0).sum();
        assert!((between - 0.63).abs() < 1e-12);
    }

    #[test]
    fn replication_is_deterministic() {
        let c = ScenarioConfig {
            n: 200,
            replications: 3,
            ..Default::default()
        };
        let study = Study::Grid(c);
        let p = study.prepare().unwrap();
        assert_eq!(p.replicate(2).unwrap(), p.replicate(2).unwrap());
        assert_ne!(p.replicate(1).unwrap(), p.replicate(2).unwrap());
    }
}
