use serde::{Deserialize, Serialize};

use super::survival::{default_n_max, lambda_star, lambda_star_finite, survival_limit, LambdaStarOptions, ZERO_THRESHOLD};
use super::{is_double_semi_stochastic, Chain, ChainError, RoutingMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroOnlyInvariant {
    Yes,
    No,
    Inconclusive,
}

/// Which sufficient condition produced the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Double semi-stochastic chain: zero is the only bounded invariant
    /// measure iff λ* vanishes.
    LambdaStar,
    /// Summable columns whose norms `‖γ_j⁽ⁿ⁾‖₁` tend to zero.
    ColumnDecay,
    /// A single column `j₀` with all `p_{i j₀} > 0` whose norm tends to zero.
    SingleColumn,
    None,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub double_semi_stochastic: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_star: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncations: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column_norms: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j0: Option<usize>,
    pub iterations: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransienceVerdict {
    pub zero_only_invariant: ZeroOnlyInvariant,
    pub method: Method,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerdictOptions {
    pub schedule: Vec<usize>,
    pub lambda: LambdaStarOptions,
    /// Relative growth of a truncated column sum between the two largest
    /// truncations beyond which the column counts as non-summable.
    pub summability_tol: f64,
}

impl Default for VerdictOptions {
    fn default() -> Self {
        Self {
            schedule: vec![250, 500, 1000],
            lambda: LambdaStarOptions::default(),
            summability_tol: 1e-6,
        }
    }
}

fn yes(method: Method, evidence: Evidence) -> TransienceVerdict {
    TransienceVerdict {
        zero_only_invariant: ZeroOnlyInvariant::Yes,
        method,
        evidence,
    }
}

pub fn transience_verdict(chain: &Chain, opts: &VerdictOptions) -> Result<TransienceVerdict, ChainError> {
    match chain {
        Chain::Finite(p) => Ok(finite_verdict(p, opts)),
        Chain::Countable(c) => {
            c.validate()?;
            let k_max = *opts
                .schedule
                .last()
                .ok_or_else(|| ChainError::InvalidSpec("empty truncation schedule".into()))?;
            let dss = opts
                .schedule
                .iter()
                .map(|&k| c.truncate(k).map(|p| is_double_semi_stochastic(&p)))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .all(|b| b);
            let mut evidence = Evidence {
                double_semi_stochastic: Some(dss),
                truncations: Some(opts.schedule.clone()),
                ..Evidence::default()
            };
            if dss {
                let est = lambda_star(c, &opts.schedule, &opts.lambda)?;
                evidence.lambda_star = Some(est.values().to_vec());
                evidence.iterations = est.truncations.last().map_or(0, |t| t.limit.iterations);
                if est.all_zero() {
                    evidence.note = format!("sup λ* = {:.3e} on the monitored band", est.sup());
                    return Ok(yes(Method::LambdaStar, evidence));
                }
                if est.any_positive() {
                    evidence.note = format!("λ* reaches {:.6} and is itself a nonzero bounded invariant measure", est.sup());
                    return Ok(TransienceVerdict {
                        zero_only_invariant: ZeroOnlyInvariant::No,
                        method: Method::LambdaStar,
                        evidence,
                    });
                }
            }

            // Column summability across the schedule, on the states every
            // truncation contains.
            let band = opts.schedule[0].div_ceil(2);
            let sums = opts
                .schedule
                .iter()
                .map(|&k| c.truncated_column_sums(k))
                .collect::<Result<Vec<_>, _>>()?;
            let n = sums.len();
            if n >= 2 {
                for j in 0..band {
                    let (a, b) = (sums[n - 2][j], sums[n - 1][j]);
                    if b > a * (1.0 + opts.summability_tol) + 1e-12 {
                        let err = ChainError::NonSummableColumn {
                            column: j,
                            sums: sums.iter().map(|s| s[j]).collect(),
                        };
                        evidence.note = err.to_string();
                        return Ok(TransienceVerdict {
                            zero_only_invariant: ZeroOnlyInvariant::Inconclusive,
                            method: Method::None,
                            evidence,
                        });
                    }
                }
            }
            let p = c.truncate(k_max)?;
            Ok(decay_tests(&p, band, opts, evidence))
        }
    }
}

fn finite_verdict(p: &RoutingMatrix, opts: &VerdictOptions) -> TransienceVerdict {
    let dss = is_double_semi_stochastic(p);
    let mut evidence = Evidence {
        double_semi_stochastic: Some(dss),
        ..Evidence::default()
    };
    if dss {
        if let Ok(est) = lambda_star_finite(p, &opts.lambda) {
            evidence.lambda_star = Some(est.values().to_vec());
            evidence.iterations = est.truncations[0].limit.iterations;
            if est.all_zero() {
                evidence.note = format!("sup λ* = {:.3e}", est.sup());
                return yes(Method::LambdaStar, evidence);
            }
            if est.any_positive() {
                evidence.note = format!("λ* reaches {:.6}", est.sup());
                return TransienceVerdict {
                    zero_only_invariant: ZeroOnlyInvariant::No,
                    method: Method::LambdaStar,
                    evidence,
                };
            }
        }
    }
    decay_tests(p, p.dim(), opts, evidence)
}

/// Column-norm decay on the monitored band, then the single-column shortcut.
fn decay_tests(p: &RoutingMatrix, band: usize, opts: &VerdictOptions, mut evidence: Evidence) -> TransienceVerdict {
    let n_max = opts.lambda.n_max.unwrap_or_else(|| default_n_max(p.dim()));
    let limit = survival_limit(p, band, n_max, opts.lambda.tol);
    evidence.iterations = limit.iterations;
    evidence.column_norms = Some(limit.values.clone());
    if limit.converged && limit.values.iter().all(|&v| v < ZERO_THRESHOLD) {
        evidence.note = "every monitored column norm tends to zero".into();
        return yes(Method::ColumnDecay, evidence);
    }
    let m = p.dim();
    let j0 = (0..band).find(|&j| limit.values[j] < ZERO_THRESHOLD && (0..m).all(|i| p.get(i, j) > 0.0));
    if let Some(j0) = j0 {
        evidence.j0 = Some(j0);
        evidence.note = format!("column {} has all entries positive and norm {:.3e}", j0 + 1, limit.values[j0]);
        return yes(Method::SingleColumn, evidence);
    }
    evidence.note = if limit.converged {
        "column norms converge to positive values; no sufficient condition applies".into()
    } else {
        "column norms did not settle within the iteration budget".into()
    };
    TransienceVerdict {
        zero_only_invariant: ZeroOnlyInvariant::Inconclusive,
        method: Method::None,
        evidence,
    }
}
