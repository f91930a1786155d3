//! Thread-parallel replication runner.
//!
//! Replications are independent pure functions of `(study, index)`, so they
//! are mapped over a rayon pool, collected back in index order and reduced
//! by the core aggregator. Output is identical at any thread count.

use psiv_core::simulation::{aggregate, study_id, ReplicationOutcome, ScenarioMetrics, Study};
use rayon::prelude::*;

use crate::error::Result;

/// Builds a pool with `threads` workers; `0` means one per available core.
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

/// Runs every replication of `study` on `pool` and aggregates.
pub fn run_study_on(pool: &rayon::ThreadPool, study: &Study) -> Result<Vec<ScenarioMetrics>> {
    let prepared = study.prepare()?;
    let outcomes: Vec<ReplicationOutcome> = pool.install(|| {
        (0..study.replications())
            .into_par_iter()
            .map(|r| prepared.replicate(r))
            .collect::<psiv_core::Result<Vec<_>>>()
    })?;
    Ok(aggregate(study, &study_id(study), &outcomes))
}

/// Runs the studies one after another, each parallel over replications.
pub fn run_studies(studies: &[Study], threads: usize) -> Result<Vec<ScenarioMetrics>> {
    let pool = thread_pool(threads)?;
    let mut rows = Vec::new();
    for s in studies {
        rows.extend(run_study_on(&pool, s)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use psiv_core::simulation::{run_study, ScenarioConfig};

    #[test]
    fn parallel_matches_sequential() {
        let study = Study::Grid(ScenarioConfig {
            n: 200,
            replications: 40,
            predicts_outcome: true,
            ..ScenarioConfig::default()
        });
        let seq = run_study(&study).unwrap();
        for threads in [1, 3] {
            assert_eq!(run_studies(std::slice::from_ref(&study), threads).unwrap(), seq);
        }
    }
}
