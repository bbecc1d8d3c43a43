//! Column-sum iterates `v⁽ⁿ⁾ = e Pⁿ` and the maximal invariant measure λ*.
//!
//! `v⁽ⁿ⁾(j)` is the probability that the dual chain started at `j` is still
//! away from ∞ after `n` steps. When every column of `P` sums to at most one
//! the iterates are entrywise non-increasing and their limit is λ*.

use serde::{Deserialize, Serialize};

use super::countable::CountableChainSpec;
use super::matrix::{RoutingMatrix, SUM_TOLERANCE};
use super::ChainError;

/// Values below this count as zero when classifying λ*.
pub const ZERO_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalVector {
    pub iteration: usize,
    pub values: Vec<f64>,
}

/// Lazily produces `v⁽¹⁾, v⁽²⁾, …` by repeated vector–matrix products.
pub struct SurvivalIter<'a> {
    p: &'a RoutingMatrix,
    current: Vec<f64>,
    scratch: Vec<f64>,
    iteration: usize,
}

impl<'a> SurvivalIter<'a> {
    pub fn new(p: &'a RoutingMatrix) -> Self {
        Self {
            p,
            current: vec![1.0; p.dim()],
            scratch: vec![0.0; p.dim()],
            iteration: 0,
        }
    }

    pub fn current(&self) -> &[f64] {
        &self.current
    }

    /// Advances one step and returns the sup-norm change over the first
    /// `band` states.
    fn advance(&mut self, band: usize) -> f64 {
        self.p.left_mul_into(&self.current, &mut self.scratch);
        let change = self.current[..band]
            .iter()
            .zip(&self.scratch[..band])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut self.current, &mut self.scratch);
        self.iteration += 1;
        change
    }
}

impl Iterator for SurvivalIter<'_> {
    type Item = SurvivalVector;

    fn next(&mut self) -> Option<SurvivalVector> {
        let band = self.current.len();
        self.advance(band);
        Some(SurvivalVector {
            iteration: self.iteration,
            values: self.current.clone(),
        })
    }
}

pub fn default_n_max(m: usize) -> usize {
    let m = m.max(1);
    (1_000_000usize.div_ceil(m)).max(4 * m)
}

/// Collects `v⁽¹⁾, v⁽²⁾, …` until the sup-norm step change drops below `tol`
/// or `n_max` iterates have been produced.
pub fn survival_iterate(p: &RoutingMatrix, n_max: usize, tol: f64) -> Vec<SurvivalVector> {
    let mut iter = SurvivalIter::new(p);
    let mut out = Vec::new();
    let band = p.dim();
    while iter.iteration < n_max {
        let change = iter.advance(band);
        out.push(SurvivalVector {
            iteration: iter.iteration,
            values: iter.current.clone(),
        });
        if change < tol {
            break;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLimit {
    /// Limit estimates for the monitored states.
    pub values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub last_change: f64,
    /// Whether every step was entrywise non-increasing on the monitored band.
    pub monotone: bool,
}

/// Iterates until the first `band` states are Cauchy-converged.
pub fn survival_limit(p: &RoutingMatrix, band: usize, n_max: usize, tol: f64) -> SurvivalLimit {
    let band = band.min(p.dim());
    let mut iter = SurvivalIter::new(p);
    let mut last_change = f64::INFINITY;
    let mut converged = band == 0;
    let mut monotone = true;
    while !converged && iter.iteration < n_max {
        let before = iter.current[..band].to_vec();
        last_change = iter.advance(band);
        monotone &= before.iter().zip(&iter.current[..band]).all(|(a, b)| b <= a);
        converged = last_change < tol;
    }
    SurvivalLimit {
        values: iter.current[..band].to_vec(),
        iterations: iter.iteration,
        converged,
        last_change,
        monotone,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaStarOptions {
    pub tol: f64,
    /// Iteration cap per truncation; `None` means [`default_n_max`].
    pub n_max: Option<usize>,
    /// Fraction of each truncation whose states are monitored and reported.
    pub interior_fraction: f64,
    /// Largest change between the last two truncations for a positive
    /// estimate to count as settled.
    pub stability_tol: f64,
}

impl Default for LambdaStarOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            n_max: None,
            interior_fraction: 0.5,
            stability_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateVerdict {
    Zero,
    Positive,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationEstimate {
    pub truncation: usize,
    pub band: usize,
    pub limit: SurvivalLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaStarEstimate {
    pub truncations: Vec<TruncationEstimate>,
    /// Verdict for the states monitored on every truncation.
    pub verdicts: Vec<StateVerdict>,
}

impl LambdaStarEstimate {
    /// Estimates from the largest truncation, restricted to the states
    /// monitored on every truncation.
    pub fn values(&self) -> &[f64] {
        let last = self.truncations.last().expect("at least one truncation");
        &last.limit.values[..self.verdicts.len()]
    }

    pub fn sup(&self) -> f64 {
        self.values().iter().copied().fold(0.0, f64::max)
    }

    pub fn all_zero(&self) -> bool {
        self.verdicts.iter().all(|v| *v == StateVerdict::Zero)
    }

    pub fn any_positive(&self) -> bool {
        self.verdicts.contains(&StateVerdict::Positive)
    }

    /// Checks `λ*_K(j) ≤ λ*_{K'}(j) + slack` for consecutive truncations.
    pub fn is_nondecreasing_in_truncation(&self, slack: f64) -> bool {
        self.truncations.windows(2).all(|w| {
            let n = w[0].limit.values.len().min(w[1].limit.values.len());
            (0..n).all(|j| w[0].limit.values[j] <= w[1].limit.values[j] + slack)
        })
    }
}

fn band_for(k: usize, fraction: f64) -> usize {
    ((k as f64 * fraction).ceil() as usize).clamp(1, k)
}

pub fn is_double_semi_stochastic(p: &RoutingMatrix) -> bool {
    p.column_sums().iter().all(|&s| s <= 1.0 + SUM_TOLERANCE)
}

fn classify(values: &[f64], converged: bool, previous: Option<&[f64]>, opts: &LambdaStarOptions) -> Vec<StateVerdict> {
    values
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            if !converged {
                StateVerdict::Inconclusive
            } else if v < ZERO_THRESHOLD {
                StateVerdict::Zero
            } else {
                match previous {
                    None => StateVerdict::Positive,
                    Some(prev) if (prev[j] - v).abs() <= opts.stability_tol => StateVerdict::Positive,
                    Some(_) => StateVerdict::Inconclusive,
                }
            }
        })
        .collect()
}

/// λ* of a finite chain: no truncation is involved, all states are monitored.
pub fn lambda_star_finite(p: &RoutingMatrix, opts: &LambdaStarOptions) -> Result<LambdaStarEstimate, ChainError> {
    if let Some((column, &sum)) = p
        .column_sums()
        .iter()
        .enumerate()
        .find(|(_, &s)| s > 1.0 + SUM_TOLERANCE)
    {
        return Err(ChainError::NotDoubleSemiStochastic { column, sum });
    }
    let m = p.dim();
    let limit = survival_limit(p, m, opts.n_max.unwrap_or_else(|| default_n_max(m)), opts.tol);
    let verdicts = classify(&limit.values, limit.converged, None, opts);
    Ok(LambdaStarEstimate {
        truncations: vec![TruncationEstimate {
            truncation: m,
            band: m,
            limit,
        }],
        verdicts,
    })
}

/// λ* of a countable chain from a schedule of increasing truncations.
pub fn lambda_star(
    chain: &CountableChainSpec,
    schedule: &[usize],
    opts: &LambdaStarOptions,
) -> Result<LambdaStarEstimate, ChainError> {
    if schedule.is_empty() || schedule.windows(2).any(|w| w[0] >= w[1]) || schedule[0] == 0 {
        return Err(ChainError::InvalidSpec(
            "truncation schedule must be non-empty and strictly increasing".into(),
        ));
    }
    let mut truncations = Vec::with_capacity(schedule.len());
    for &k in schedule {
        let p = chain.truncate(k)?;
        if let Some((column, &sum)) = p
            .column_sums()
            .iter()
            .enumerate()
            .find(|(_, &s)| s > 1.0 + SUM_TOLERANCE)
        {
            return Err(ChainError::NotDoubleSemiStochastic { column, sum });
        }
        let band = band_for(k, opts.interior_fraction);
        let n_max = opts.n_max.unwrap_or_else(|| default_n_max(k));
        let limit = survival_limit(&p, band, n_max, opts.tol);
        truncations.push(TruncationEstimate {
            truncation: k,
            band,
            limit,
        });
    }
    let common = truncations.iter().map(|t| t.band).min().unwrap_or(0);
    let last = truncations.last().unwrap();
    let previous = truncations
        .len()
        .checked_sub(2)
        .map(|i| &truncations[i].limit.values[..common]);
    let verdicts = classify(&last.limit.values[..common], last.limit.converged, previous, opts);
    Ok(LambdaStarEstimate { truncations, verdicts })
}
