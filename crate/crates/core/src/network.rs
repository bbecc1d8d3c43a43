//! Network description shared by the simulator and the mean-field integrator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{validate_open, RoutingMatrix, SUM_TOLERANCE};
use crate::service::{ServiceDistribution, ServiceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("{what} has length {got}, expected {expected}")]
    Dimension { what: &'static str, got: usize, expected: usize },
    #[error("routing fails the open-network check: {0}")]
    NotOpen(String),
    #[error("closed network needs zero exit and zero inflow: {0}")]
    NotClosed(String),
    #[error("service law of type {index}: {source}")]
    Service { index: usize, source: ServiceError },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mode {
    Open,
    /// Fixed population of `customers`.
    Closed {
        customers: usize,
        /// Per-server initial counts, type-major (`N·m` entries). Round-robin
        /// placement when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        placement: Option<Vec<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Servers per type, `N`.
    pub servers: usize,
    pub routing: RoutingMatrix,
    /// Exogenous Poisson rate per server of each type.
    pub exogenous: Vec<f64>,
    pub services: Vec<ServiceDistribution>,
    pub mode: Mode,
    #[serde(default)]
    pub horizon: f64,
    #[serde(default)]
    pub warmup: f64,
    /// Whether a routed customer may pick its current server again.
    #[serde(default = "yes")]
    pub allow_self_routing: bool,
    /// Accept open routing that fails the all-positive/exit check.
    #[serde(default)]
    pub skip_open_check: bool,
}

fn yes() -> bool {
    true
}

impl NetworkSpec {
    pub fn types(&self) -> usize {
        self.routing.dim()
    }

    pub fn service_means(&self) -> Vec<f64> {
        self.services.iter().map(ServiceDistribution::mean).collect()
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.mode, Mode::Closed { .. })
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let m = self.types();
        if m == 0 {
            return Err(SpecError::Invalid("network has no types".into()));
        }
        if self.servers == 0 {
            return Err(SpecError::Invalid("need at least one server per type".into()));
        }
        for (what, got) in [("exogenous", self.exogenous.len()), ("services", self.services.len())] {
            if got != m {
                return Err(SpecError::Dimension { what, got, expected: m });
            }
        }
        if let Some((i, v)) = self.exogenous.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(SpecError::Invalid(format!("exogenous rate {} = {v} must be nonnegative", i + 1)));
        }
        for (index, s) in self.services.iter().enumerate() {
            s.validate().map_err(|source| SpecError::Service { index, source })?;
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0 && self.warmup >= 0.0 && self.warmup <= self.horizon) {
            return Err(SpecError::Invalid(format!(
                "need 0 ≤ warmup ≤ horizon, got warmup {} horizon {}",
                self.warmup, self.horizon
            )));
        }
        match &self.mode {
            Mode::Open => {
                let report = validate_open(&self.routing);
                if !report.passed() && !self.skip_open_check {
                    let why = match report.first_zero {
                        Some((i, j)) => format!("p({},{}) = 0", i + 1, j + 1),
                        None => "no state has positive exit".into(),
                    };
                    return Err(SpecError::NotOpen(why));
                }
            }
            Mode::Closed { customers, placement } => {
                if let Some(i) = (0..m).find(|&i| self.routing.exit(i) > SUM_TOLERANCE) {
                    return Err(SpecError::NotClosed(format!("type {} exits with {}", i + 1, self.routing.exit(i))));
                }
                if self.exogenous.iter().any(|&v| v > 0.0) {
                    return Err(SpecError::NotClosed("exogenous rates must be zero".into()));
                }
                if let Some(p) = placement {
                    if p.len() != m * self.servers {
                        return Err(SpecError::Dimension {
                            what: "placement",
                            got: p.len(),
                            expected: m * self.servers,
                        });
                    }
                    if p.iter().sum::<usize>() != *customers {
                        return Err(SpecError::Invalid("placement does not add up to the population".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// The two-type network used throughout the examples:
    /// `V = (0.1, 0.1)`, `P = [[0.5, 0.5], [0.3, 0.3]]`, exponential(1).
    pub fn reference(servers: usize) -> Self {
        Self {
            servers,
            routing: RoutingMatrix::from_dense(&[vec![0.5, 0.5], vec![0.3, 0.3]]).expect("valid"),
            exogenous: vec![0.1, 0.1],
            services: vec![ServiceDistribution::exponential(1.0); 2],
            mode: Mode::Open,
            horizon: 1000.0,
            warmup: 200.0,
            allow_self_routing: true,
            skip_open_check: false,
        }
    }
}
