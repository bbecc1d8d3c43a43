use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CountableChainSpec, RoutingMatrix};
use crate::rng;

/// One transition of a chain driven by a uniform variate. `None` is ∞.
pub trait ChainSampler {
    fn step(&self, state: usize, u: f64) -> Option<usize>;
}

impl ChainSampler for RoutingMatrix {
    fn step(&self, state: usize, u: f64) -> Option<usize> {
        let mut acc = 0.0;
        for (j, p) in self.row(state) {
            acc += p;
            if u < acc {
                return Some(j);
            }
        }
        None
    }
}

impl ChainSampler for CountableChainSpec {
    fn step(&self, state: usize, u: f64) -> Option<usize> {
        if let CountableChainSpec::Banded { up, down, stay, .. } = *self {
            let down = if state > 0 { down } else { 0.0 };
            return if u < down {
                Some(state - 1)
            } else if u < down + stay {
                Some(state)
            } else if u < down + stay + up {
                Some(state + 1)
            } else {
                None
            };
        }
        let mut acc = 0.0;
        let mut hit = None;
        self.for_each_in_row(state, |j, p| {
            if hit.is_none() {
                acc += p;
                if u < acc {
                    hit = Some(j);
                }
            }
        });
        hit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvoidanceEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// Normal-approximation 99.7% interval clamped to `[0, 1]`.
    pub ci: (f64, f64),
    pub samples: u64,
    pub horizon: u64,
}

impl AvoidanceEstimate {
    fn exact(value: f64, samples: u64, horizon: u64) -> Self {
        Self {
            estimate: value,
            std_error: 0.0,
            ci: (value, value),
            samples,
            horizon,
        }
    }
}

const CHUNKS: u64 = 16;

/// Monte-Carlo estimate of `Pr{chain from start avoids A for horizon steps}`.
///
/// Paths absorbed at ∞ never hit `A` and count as avoiding it. The estimate
/// is an upper bound on the probability of never hitting `A` and is
/// non-increasing in `horizon`. States are 0-based.
pub fn avoidance_probability<S: ChainSampler + Sync>(
    chain: &S,
    a: &[usize],
    start: usize,
    horizon: u64,
    samples: u64,
    seed: u64,
) -> AvoidanceEstimate {
    if a.is_empty() {
        return AvoidanceEstimate::exact(1.0, samples, horizon);
    }
    if a.contains(&start) {
        return AvoidanceEstimate::exact(0.0, samples, horizon);
    }
    let size = a.iter().max().map_or(0, |&x| x + 1);
    let mut in_a = vec![false; size];
    for &s in a {
        in_a[s] = true;
    }
    let chunk = |c: u64| -> u64 {
        let lo = samples * c / CHUNKS;
        let hi = samples * (c + 1) / CHUNKS;
        let mut rng = rng::stream(seed, c);
        let mut avoided = 0;
        for _ in lo..hi {
            let mut state = start;
            let mut ok = true;
            for _ in 0..horizon {
                match chain.step(state, rng.random::<f64>()) {
                    None => break,
                    Some(j) if j < size && in_a[j] => {
                        ok = false;
                        break;
                    }
                    Some(j) => state = j,
                }
            }
            avoided += u64::from(ok);
        }
        avoided
    };
    #[cfg(feature = "parallel")]
    let avoided: u64 = {
        use rayon::prelude::*;
        (0..CHUNKS).into_par_iter().map(chunk).sum()
    };
    #[cfg(not(feature = "parallel"))]
    let avoided: u64 = (0..CHUNKS).map(chunk).sum();

    let n = samples.max(1) as f64;
    let p = avoided as f64 / n;
    let se = (p * (1.0 - p) / n).sqrt();
    AvoidanceEstimate {
        estimate: p,
        std_error: se,
        ci: ((p - 3.0 * se).max(0.0), (p + 3.0 * se).min(1.0)),
        samples,
        horizon,
    }
}
