use serde::{Deserialize, Serialize};

use super::matrix::{RoutingMatrix, SUM_TOLERANCE};
use super::ChainError;

/// A countable routing chain on states `1, 2, …` (0-based internally)
/// given by a generator rule, plus the absorbing state ∞.
///
/// JSON documents use 1-based state numbers, e.g.
/// `{"kind": "banded", "up": 0.3, "down": 0.7, "exit_at_1": 0.7}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CountableChainSpec {
    /// Birth–death chain: `p_{i,i+1} = up`, `p_{i,i-1} = down` for `i ≥ 2`,
    /// `p_{ii} = stay`. From state 1 the downward move leaves the network.
    Banded {
        up: f64,
        down: f64,
        #[serde(default)]
        stay: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exit_at_1: Option<f64>,
    },
    /// Explicit rows for states `1..=rows.len()`; later states exit at once.
    Table { rows: Vec<Vec<(usize, f64)>> },
    /// `p_{i,i+1} = up` and `p_{i,1} = reset` for every state. Column 1 is
    /// not summable, so the dual chain has no finite rows.
    Reset { up: f64, reset: f64 },
}

impl CountableChainSpec {
    pub fn banded(up: f64, down: f64) -> Self {
        Self::Banded {
            up,
            down,
            stay: 0.0,
            exit_at_1: None,
        }
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        let prob = |name: &str, p: f64| {
            if p.is_finite() && (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(ChainError::InvalidSpec(format!("{name} = {p} is not a probability")))
            }
        };
        match *self {
            Self::Banded {
                up,
                down,
                stay,
                exit_at_1,
            } => {
                prob("up", up)?;
                prob("down", down)?;
                prob("stay", stay)?;
                if up + down + stay > 1.0 + SUM_TOLERANCE {
                    return Err(ChainError::RowSumExceedsOne {
                        row: 1,
                        sum: up + down + stay,
                    });
                }
                if let Some(r) = exit_at_1 {
                    prob("exit_at_1", r)?;
                    let derived = 1.0 - up - stay;
                    if (r - derived).abs() > 1e-9 {
                        return Err(ChainError::InvalidSpec(format!(
                            "exit_at_1 = {r} but row 1 implies p(1,∞) = {derived}"
                        )));
                    }
                }
                Ok(())
            }
            Self::Table { ref rows } => {
                for (i, row) in rows.iter().enumerate() {
                    let mut sum = 0.0;
                    for &(j, p) in row {
                        if j == 0 {
                            return Err(ChainError::IndexOutOfRange {
                                row: i,
                                col: 0,
                                m: usize::MAX,
                            });
                        }
                        if !p.is_finite() || p < 0.0 {
                            return Err(ChainError::InvalidEntry {
                                row: i,
                                col: j - 1,
                                value: p,
                            });
                        }
                        sum += p;
                    }
                    if sum > 1.0 + SUM_TOLERANCE {
                        return Err(ChainError::RowSumExceedsOne { row: i, sum });
                    }
                }
                Ok(())
            }
            Self::Reset { up, reset } => {
                prob("up", up)?;
                prob("reset", reset)?;
                if up + reset > 1.0 + SUM_TOLERANCE {
                    return Err(ChainError::RowSumExceedsOne {
                        row: 1,
                        sum: up + reset,
                    });
                }
                Ok(())
            }
        }
    }

    /// Transitions out of 0-based state `i`. Entries are 0-based and may
    /// repeat a column (the reset and banded rules can coincide at state 0).
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(3);
        self.for_each_in_row(i, |j, p| out.push((j, p)));
        out
    }

    pub(crate) fn for_each_in_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match *self {
            Self::Banded { up, down, stay, .. } => {
                if i > 0 && down > 0.0 {
                    f(i - 1, down);
                }
                if stay > 0.0 {
                    f(i, stay);
                }
                if up > 0.0 {
                    f(i + 1, up);
                }
            }
            Self::Table { ref rows } => {
                if let Some(row) = rows.get(i) {
                    for &(j, p) in row {
                        if p > 0.0 {
                            f(j - 1, p);
                        }
                    }
                }
            }
            Self::Reset { up, reset } => {
                if reset > 0.0 {
                    f(0, reset);
                }
                if up > 0.0 {
                    f(i + 1, up);
                }
            }
        }
    }

    /// Restriction to states `0..k`; every transition leaving that range is
    /// sent to ∞.
    pub fn truncate(&self, k: usize) -> Result<RoutingMatrix, ChainError> {
        self.validate()?;
        let rows = (0..k)
            .map(|i| self.row(i).into_iter().filter(|&(j, _)| j < k).collect())
            .collect();
        RoutingMatrix::from_sparse_rows(k, rows)
    }

    /// Transposed chain `p*_ij = p_ji`. Fails when a column sums above one or
    /// when a dual row would need infinitely many entries.
    pub fn dual(&self) -> Result<Self, ChainError> {
        self.validate()?;
        match *self {
            Self::Banded {
                up, down, stay, ..
            } => {
                // Column 1 collects stay (from 1) and down (from 2).
                let col1 = stay + down;
                if col1 > 1.0 + SUM_TOLERANCE {
                    return Err(ChainError::NotSubStochasticDual { column: 0, sum: col1 });
                }
                let inner = up + stay + down;
                if inner > 1.0 + SUM_TOLERANCE {
                    return Err(ChainError::NotSubStochasticDual { column: 1, sum: inner });
                }
                Ok(Self::Banded {
                    up: down,
                    down: up,
                    stay,
                    exit_at_1: None,
                })
            }
            Self::Table { ref rows } => {
                let n = rows
                    .iter()
                    .flat_map(|r| r.iter().map(|&(j, _)| j))
                    .chain(std::iter::once(rows.len()))
                    .max()
                    .unwrap_or(0);
                let mut dual: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
                for (i, row) in rows.iter().enumerate() {
                    for &(j, p) in row {
                        if p > 0.0 {
                            dual[j - 1].push((i + 1, p));
                        }
                    }
                }
                for (j, row) in dual.iter().enumerate() {
                    let sum: f64 = row.iter().map(|&(_, p)| p).sum();
                    if sum > 1.0 + SUM_TOLERANCE {
                        return Err(ChainError::NotSubStochasticDual { column: j, sum });
                    }
                }
                while dual.last().is_some_and(|r| r.is_empty()) {
                    dual.pop();
                }
                Ok(Self::Table { rows: dual })
            }
            Self::Reset { reset, .. } if reset > 0.0 => Err(ChainError::InfiniteDualSupport { column: 0 }),
            Self::Reset { up, .. } => Ok(Self::Banded {
                up: 0.0,
                down: up,
                stay: 0.0,
                exit_at_1: None,
            }),
        }
    }

    /// Per-column sums on the `k`-truncation.
    pub fn truncated_column_sums(&self, k: usize) -> Result<Vec<f64>, ChainError> {
        Ok(self.truncate(k)?.column_sums())
    }
}
