//! Traffic equations `Λ = V + ΛP` and the per-node underload check.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::RoutingMatrix;

pub const DIVERGENCE_BOUND: f64 = 1e8;
pub const DEFAULT_MAX_TERMS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("series diverges: partial sum {value:.3e} at type {index} after {terms} terms")]
    Divergent { index: usize, value: f64, terms: usize },
    #[error("series did not converge within {terms} terms (last term norm {last_norm:.3e})")]
    NotConverged { terms: usize, last_norm: f64 },
    #[error("rate vector has length {got}, chain has {expected} types")]
    Dimension { got: usize, expected: usize },
    #[error("rate v[{index}] = {value} must be finite and nonnegative")]
    InvalidRate { index: usize, value: f64 },
    #[error("residual {residual:.3e} exceeds {bound:.3e}")]
    Residual { residual: f64, bound: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSolution {
    pub vbar: Vec<f64>,
    pub residual: f64,
    pub terms_used: usize,
}

/// `V̄ = Σ_k V Pᵏ`, summed until the ℓ¹ norm of a term drops below `tol`.
pub fn solve_traffic(v: &[f64], p: &RoutingMatrix, tol: f64, max_terms: usize) -> Result<TrafficSolution, TrafficError> {
    let m = p.dim();
    if v.len() != m {
        return Err(TrafficError::Dimension { got: v.len(), expected: m });
    }
    if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| !x.is_finite() || **x < 0.0) {
        return Err(TrafficError::InvalidRate { index, value });
    }
    let mut sum = v.to_vec();
    let mut term = v.to_vec();
    let mut next = vec![0.0; m];
    let mut terms = 1;
    let mut norm: f64 = term.iter().sum();
    while norm >= tol {
        if terms >= max_terms {
            return Err(TrafficError::NotConverged { terms, last_norm: norm });
        }
        p.left_mul_into(&term, &mut next);
        std::mem::swap(&mut term, &mut next);
        norm = term.iter().sum();
        for (s, t) in sum.iter_mut().zip(&term) {
            *s += t;
        }
        terms += 1;
        if let Some((index, &value)) = sum.iter().enumerate().find(|(_, s)| !(**s <= DIVERGENCE_BOUND)) {
            return Err(TrafficError::Divergent { index, value, terms });
        }
    }
    let residual = traffic_residual(v, p, &sum);
    let bound = 10.0 * tol.max(f64::EPSILON * sum.iter().copied().fold(1.0, f64::max));
    if residual >= bound {
        return Err(TrafficError::Residual { residual, bound });
    }
    Ok(TrafficSolution {
        vbar: sum,
        residual,
        terms_used: terms,
    })
}

/// `‖Λ − (V + ΛP)‖∞`.
pub fn traffic_residual(v: &[f64], p: &RoutingMatrix, lambda: &[f64]) -> f64 {
    let lp = p.left_mul(lambda);
    lambda
        .iter()
        .zip(v)
        .zip(&lp)
        .map(|((l, v), lp)| (l - v - lp).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rho: Vec<f64>,
    pub vbar: Vec<f64>,
    pub underloaded: bool,
    pub margin: f64,
    /// Types with `ρ_i ≥ 1 − margin`.
    pub overloaded_types: Vec<usize>,
}

impl LoadReport {
    pub fn rho_max(&self) -> f64 {
        self.rho.iter().copied().fold(0.0, f64::max)
    }
}

/// `ρ_i = E(η_i) V̄_i`; underloaded iff every `ρ_i < 1 − margin`.
pub fn check_underload(vbar: &[f64], service_means: &[f64], margin: f64) -> LoadReport {
    let rho: Vec<f64> = vbar.iter().zip(service_means).map(|(v, e)| v * e).collect();
    let overloaded_types: Vec<usize> = rho
        .iter()
        .enumerate()
        .filter(|(_, &r)| !(r < 1.0 - margin))
        .map(|(i, _)| i)
        .collect();
    LoadReport {
        underloaded: overloaded_types.is_empty(),
        rho,
        vbar: vbar.to_vec(),
        margin,
        overloaded_types,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn reference() -> RoutingMatrix {
        RoutingMatrix::from_dense(&[vec![0.5, 0.5], vec![0.3, 0.3]]).unwrap()
    }

    /// Direct LU solve of `Λ(I − P) = V`, i.e. `(I − P)ᵀ Λᵀ = Vᵀ`.
    fn direct(v: &[f64], p: &RoutingMatrix) -> Vec<f64> {
        let m = p.dim();
        let a = DMatrix::from_fn(m, m, |i, j| f64::from(i == j) - p.get(j, i));
        let x = a.lu().solve(&DVector::from_column_slice(v)).unwrap();
        x.iter().copied().collect()
    }

    #[test]
    fn examples() {
        let one = RoutingMatrix::from_dense(&[vec![0.5]]).unwrap();
        let s = solve_traffic(&[0.2], &one, 1e-14, DEFAULT_MAX_TERMS).unwrap();
        assert!((s.vbar[0] - 0.4).abs() < 1e-13);

        let s = solve_traffic(&[0.1, 0.1], &reference(), 1e-14, DEFAULT_MAX_TERMS).unwrap();
        let d = direct(&[0.1, 0.1], &reference());
        for (a, b) in s.vbar.iter().zip(&d) {
            assert!((a - b).abs() < 1e-12);
            assert!((a - 0.5).abs() < 1e-12);
        }

        let s = solve_traffic(&[0.0, 0.0], &reference(), 1e-14, DEFAULT_MAX_TERMS).unwrap();
        assert_eq!(s.vbar, vec![0.0, 0.0]);
        assert_eq!(s.terms_used, 1);
    }

    #[test]
    fn closed_chain_diverges() {
        let p = RoutingMatrix::from_dense(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            solve_traffic(&[0.1, 0.1], &p, 1e-12, DEFAULT_MAX_TERMS),
            Err(TrafficError::Divergent { .. } | TrafficError::NotConverged { .. })
        ));
    }

    #[test]
    fn underload_examples() {
        let r = check_underload(&[0.5, 0.5], &[1.0, 1.0], 0.0);
        assert_eq!(r.rho, vec![0.5, 0.5]);
        assert!(r.underloaded);

        let r = check_underload(&[0.5], &[2.0], 0.0);
        assert_eq!(r.rho, vec![1.0]);
        assert!(!r.underloaded);

        let one = RoutingMatrix::from_dense(&[vec![0.5]]).unwrap();
        let s = solve_traffic(&[0.2], &one, 1e-14, DEFAULT_MAX_TERMS).unwrap();
        let r = check_underload(&s.vbar, &[2.0], 0.0);
        assert!((r.rho[0] - 2.0 * 0.2 / (1.0 - 0.5)).abs() < 1e-12);
        assert!(r.underloaded);
    }

    fn open_instance() -> impl Strategy<Value = (Vec<f64>, RoutingMatrix)> {
        (1usize..20).prop_flat_map(|m| {
            (
                prop::collection::vec(0.0f64..1.0, m),
                prop::collection::vec(0.01f64..1.0, m * m),
                prop::collection::vec(0.6f64..0.99, m),
            )
                .prop_map(move |(v, raw, target)| {
                    let rows: Vec<Vec<f64>> = (0..m)
                        .map(|i| {
                            let s: f64 = raw[i * m..(i + 1) * m].iter().sum();
                            raw[i * m..(i + 1) * m].iter().map(|x| x / s * target[i]).collect()
                        })
                        .collect();
                    (v, RoutingMatrix::from_dense(&rows).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn neumann_matches_direct((v, p) in open_instance()) {
            let s = solve_traffic(&v, &p, 1e-13, DEFAULT_MAX_TERMS).unwrap();
            let d = direct(&v, &p);
            for (a, b) in s.vbar.iter().zip(&d) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            for (a, b) in s.vbar.iter().zip(&v) {
                prop_assert!(a >= b);
            }
        }

        #[test]
        fn monotone_in_inflow((v, p) in open_instance(), k in 0usize..20, bump in 0.0f64..1.0) {
            let base = solve_traffic(&v, &p, 1e-13, DEFAULT_MAX_TERMS).unwrap();
            let mut w = v.clone();
            let k = k % w.len();
            w[k] += bump;
            let more = solve_traffic(&w, &p, 1e-13, DEFAULT_MAX_TERMS).unwrap();
            for (a, b) in base.vbar.iter().zip(&more.vbar) {
                prop_assert!(b + 1e-12 >= *a);
            }
        }

        #[test]
        fn load_scales_with_service_means((v, p) in open_instance(), scale in 0.1f64..10.0) {
            let s = solve_traffic(&v, &p, 1e-13, DEFAULT_MAX_TERMS).unwrap();
            let means: Vec<f64> = (0..v.len()).map(|i| 0.5 + i as f64 * 0.1).collect();
            let scaled: Vec<f64> = means.iter().map(|e| e * scale).collect();
            let a = check_underload(&s.vbar, &means, 0.0);
            let b = check_underload(&s.vbar, &scaled, 0.0);
            for (x, y) in a.rho.iter().zip(&b.rho) {
                prop_assert!((x * scale - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }
}
