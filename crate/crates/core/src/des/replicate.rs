use serde::{Deserialize, Serialize};

use super::{run, SimError, SimOptions, SimStats};
use crate::network::NetworkSpec;

/// Runs one replication per seed. Results are sorted by seed, so they do
/// not depend on the order of `seeds` or on scheduling.
pub fn replicate(spec: &NetworkSpec, opts: &SimOptions, seeds: &[u64]) -> Result<Vec<SimStats>, SimError> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(SimError::Options("replication seeds must be distinct".into()));
    }
    let one = |&seed: &u64| {
        run(spec, seed, opts).map_err(|e| SimError::Replication {
            seed,
            source: Box::new(e),
        })
    };
    #[cfg(feature = "parallel")]
    let out = {
        use rayon::prelude::*;
        sorted.par_iter().map(one).collect::<Result<Vec<_>, _>>()
    };
    #[cfg(not(feature = "parallel"))]
    let out = sorted.iter().map(one).collect::<Result<Vec<_>, _>>();
    out
}

/// [`replicate`] followed by `reducer` over the seed-sorted results.
pub fn replicate_with<R>(
    spec: &NetworkSpec,
    opts: &SimOptions,
    seeds: &[u64],
    reducer: impl FnOnce(&[SimStats]) -> R,
) -> Result<R, SimError> {
    Ok(reducer(&replicate(spec, opts, seeds)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledMean {
    pub mean: f64,
    /// Standard error across replications.
    pub std_error: f64,
    pub replications: usize,
}

/// Mean number in system across replications.
pub fn pooled_mean_in_system(runs: &[SimStats]) -> PooledMean {
    let n = runs.len();
    let mean = runs.iter().map(|r| r.mean_in_system).sum::<f64>() / n.max(1) as f64;
    let var = if n > 1 {
        runs.iter().map(|r| (r.mean_in_system - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    PooledMean {
        mean,
        std_error: (var / n.max(1) as f64).sqrt(),
        replications: n,
    }
}
