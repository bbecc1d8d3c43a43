//! Routing chains: finite and countable sub-stochastic matrices with an
//! absorbing exit state ∞, their duals, survival iterates and the
//! zero-invariant-measure verdict.

mod avoidance;
mod countable;
mod matrix;
mod survival;
mod verdict;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use avoidance::{avoidance_probability, AvoidanceEstimate, ChainSampler};
pub use countable::CountableChainSpec;
pub use matrix::{FiniteChainDocument, RoutingMatrix, SUM_TOLERANCE};
pub use survival::{
    default_n_max, is_double_semi_stochastic, lambda_star, lambda_star_finite, survival_iterate, survival_limit,
    LambdaStarEstimate, LambdaStarOptions, StateVerdict, SurvivalIter, SurvivalLimit, SurvivalVector,
    TruncationEstimate, ZERO_THRESHOLD,
};
pub use verdict::{transience_verdict, Evidence, Method, TransienceVerdict, VerdictOptions, ZeroOnlyInvariant};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("row {row} has {len} entries, expected {expected}")]
    Shape { row: usize, len: usize, expected: usize },
    #[error("entry ({row}, {col}) is outside a chain with {m} states")]
    IndexOutOfRange { row: usize, col: usize, m: usize },
    #[error("entry ({row}, {col}) = {value} is not a probability")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum} > 1")]
    RowSumExceedsOne { row: usize, sum: f64 },
    #[error("column {column} sums to {sum} > 1, so the dual is not sub-stochastic")]
    NotSubStochasticDual { column: usize, sum: f64 },
    #[error("column {column} sums to {sum} > 1, chain is not double semi-stochastic")]
    NotDoubleSemiStochastic { column: usize, sum: f64 },
    #[error("column {column} is not summable: truncated sums {sums:?} keep growing")]
    NonSummableColumn { column: usize, sums: Vec<f64> },
    #[error("dual row {column} would need infinitely many entries")]
    InfiniteDualSupport { column: usize },
    #[error("invalid chain: {0}")]
    InvalidSpec(String),
}

/// Outcome of [`validate_open`]. Both flags must hold for the finite
/// open-network results to apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub all_entries_positive: bool,
    pub has_exit: bool,
    pub exits: Vec<f64>,
    /// First zero entry `(i, j)`, 0-based.
    pub first_zero: Option<(usize, usize)>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.all_entries_positive && self.has_exit
    }
}

pub fn validate_open(p: &RoutingMatrix) -> ValidationReport {
    let m = p.dim();
    let first_zero = (0..m).find_map(|i| (0..m).find(|&j| p.get(i, j) <= 0.0).map(|j| (i, j)));
    let exits = p.exits();
    ValidationReport {
        all_entries_positive: first_zero.is_none(),
        has_exit: exits.iter().any(|&e| e > 0.0),
        exits,
        first_zero,
    }
}

/// `max_i Σ_j (Pⁿ)_ij`, the ℓ¹ operator norm of `x ↦ xPⁿ` on nonnegative
/// row vectors. Computed as `Pⁿ e` by `n` matrix–vector products.
pub fn contraction_coefficient(p: &RoutingMatrix, n: usize) -> f64 {
    let mut x = vec![1.0; p.dim()];
    let mut y = vec![0.0; p.dim()];
    for _ in 0..n {
        p.right_mul_into(&x, &mut y);
        std::mem::swap(&mut x, &mut y);
    }
    x.into_iter().fold(0.0, f64::max)
}

/// `p*_ij = p_ji`. Fails when a column of `P` sums above one.
pub fn dual_chain(p: &RoutingMatrix) -> Result<RoutingMatrix, ChainError> {
    for (column, sum) in p.column_sums().into_iter().enumerate() {
        if sum > 1.0 + SUM_TOLERANCE {
            return Err(ChainError::NotSubStochasticDual { column, sum });
        }
    }
    Ok(p.transpose_unchecked())
}

/// Any chain accepted by the JSON front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChainDocument {
    Finite(FiniteChainDocument),
    Countable(CountableChainSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Chain {
    Finite(RoutingMatrix),
    Countable(CountableChainSpec),
}

impl TryFrom<ChainDocument> for Chain {
    type Error = ChainError;

    fn try_from(doc: ChainDocument) -> Result<Self, ChainError> {
        match doc {
            ChainDocument::Finite(d) => Ok(Chain::Finite(d.try_into()?)),
            ChainDocument::Countable(c) => {
                c.validate()?;
                Ok(Chain::Countable(c))
            }
        }
    }
}

impl Chain {
    pub fn dual(&self) -> Result<Chain, ChainError> {
        match self {
            Chain::Finite(p) => dual_chain(p).map(Chain::Finite),
            Chain::Countable(c) => c.dual().map(Chain::Countable),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> RoutingMatrix {
        RoutingMatrix::from_dense(&[vec![0.5, 0.5], vec![0.3, 0.3]]).unwrap()
    }

    #[test]
    fn open_validation_examples() {
        let r = validate_open(&reference());
        assert!(r.passed());
        assert_eq!(r.exits, vec![0.0, 0.4]);

        let closed = validate_open(&RoutingMatrix::from_dense(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap());
        assert!(closed.all_entries_positive && !closed.has_exit);

        let zero = validate_open(&RoutingMatrix::from_dense(&[vec![0.0, 1.0], vec![0.3, 0.3]]).unwrap());
        assert!(!zero.passed());
        assert_eq!(zero.first_zero, Some((0, 0)));
    }

    #[test]
    fn contraction_examples() {
        let p = reference();
        assert!((contraction_coefficient(&p, 1) - 1.0).abs() < 1e-15);
        assert!((contraction_coefficient(&p, 2) - 0.8).abs() < 1e-15);
        assert_eq!(contraction_coefficient(&RoutingMatrix::zeros(3), 4), 0.0);
    }

    #[test]
    fn dual_examples() {
        let d = dual_chain(&reference()).unwrap();
        assert_eq!(d.to_dense(), vec![vec![0.5, 0.3], vec![0.5, 0.3]]);
        for e in d.exits() {
            assert!((e - 0.2).abs() < 1e-15);
        }
        let bad = RoutingMatrix::from_dense(&[vec![0.75, 0.0], vec![0.75, 0.0]]).unwrap();
        assert!(matches!(
            dual_chain(&bad),
            Err(ChainError::NotSubStochasticDual { column: 0, sum }) if (sum - 1.5).abs() < 1e-15
        ));
        assert!(is_double_semi_stochastic(&RoutingMatrix::zeros(2)));
    }

    #[test]
    fn documents_parse_both_kinds() {
        let f: ChainDocument = serde_json::from_str(r#"{"m":2,"rows":[[[1,0.5],[2,0.5]],[[1,0.3],[2,0.3]]]}"#).unwrap();
        assert_eq!(Chain::try_from(f).unwrap(), Chain::Finite(reference()));
        let c: ChainDocument = serde_json::from_str(r#"{"kind":"banded","up":0.7,"down":0.3,"exit_at_1":0.3}"#).unwrap();
        assert!(matches!(Chain::try_from(c).unwrap(), Chain::Countable(_)));
        assert!(serde_json::from_str::<ChainDocument>(r#"{"m":2,"rows":[],"extra":1}"#).is_err());
    }

    pub(crate) fn dss_matrix() -> impl Strategy<Value = RoutingMatrix> {
        (1usize..12).prop_flat_map(|m| {
            prop::collection::vec(0.0f64..1.0, m * m).prop_map(move |raw| {
                // Scale so that every row and column sum stays below one.
                let max_line = (0..m)
                    .flat_map(|k| {
                        let r: f64 = raw[k * m..(k + 1) * m].iter().sum();
                        let c: f64 = (0..m).map(|i| raw[i * m + k]).sum();
                        [r, c]
                    })
                    .fold(0.0, f64::max);
                let scale = if max_line > 0.0 { 0.999 / max_line } else { 0.0 };
                let rows: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| raw[i * m + j] * scale).collect()).collect();
                RoutingMatrix::from_dense(&rows).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn dual_is_an_involution(p in dss_matrix()) {
            let d = dual_chain(&p).unwrap();
            prop_assert_eq!(dual_chain(&d).unwrap(), p);
        }

        #[test]
        fn survival_is_monotone_on_dss(p in dss_matrix()) {
            let seq = survival_iterate(&p, 300, 0.0);
            let mut prev = vec![1.0; p.dim()];
            for v in seq {
                for (a, b) in prev.iter().zip(&v.values) {
                    prop_assert!(b <= a);
                    prop_assert!((0.0..=1.0).contains(b));
                }
                prev = v.values;
            }
        }

        #[test]
        fn lambda_star_is_a_fixed_point(p in dss_matrix()) {
            let opts = LambdaStarOptions::default();
            let est = lambda_star_finite(&p, &opts).unwrap();
            let l = est.values();
            let lp = p.left_mul(l);
            let res = l.iter().zip(&lp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(res < 10.0 * opts.tol);
        }

        #[test]
        fn open_chains_contract(raw in (1usize..10).prop_flat_map(|m| (Just(m), prop::collection::vec(0.01f64..1.0, m * m), 0usize..10, 0.01f64..0.5))) {
            let (m, raw, leak_row, leak) = raw;
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|i| {
                    let s: f64 = raw[i * m..(i + 1) * m].iter().sum();
                    let target = if i == leak_row % m { 1.0 - leak } else { 1.0 };
                    raw[i * m..(i + 1) * m].iter().map(|x| x / s * target).collect()
                })
                .collect();
            let p = RoutingMatrix::from_dense(&rows).unwrap();
            prop_assume!(validate_open(&p).passed());
            prop_assert!(contraction_coefficient(&p, m) < 1.0);
        }
    }
}
