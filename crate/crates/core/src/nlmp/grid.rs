use std::sync::OnceLock;

use crate::service::ServiceDistribution;

use super::NlmpError;

/// Uniform elapsed-service grid for one service law: cells
/// `[kΔτ, (k+1)Δτ)` up to the tail quantile, plus a last cell holding all
/// mass beyond it.
#[derive(Debug, Clone)]
pub struct ServiceGrid {
    dist: ServiceDistribution,
    dtau: f64,
    /// Average hazard over each cell, `ln(S_k / S_{k+1}) / Δτ`; the tail
    /// cell uses `1 / R(τ)` at its left edge.
    hazard: Vec<f64>,
    residuals: OnceLock<Vec<f64>>,
}

impl ServiceGrid {
    pub fn new(dist: &ServiceDistribution, dtau: f64, tail: f64) -> Result<Self, NlmpError> {
        dist.validate().map_err(NlmpError::Service)?;
        if !(dtau.is_finite() && dtau > 0.0) {
            return Err(NlmpError::Grid(format!("Δτ = {dtau} must be positive")));
        }
        let end = dist.upper_quantile(tail);
        let cells = ((end / dtau).ceil() as usize).max(2);
        if cells > 5_000_000 {
            return Err(NlmpError::Grid(format!("{cells} cells is too fine a grid")));
        }
        let s: Vec<f64> = (0..cells).map(|k| dist.survival(k as f64 * dtau)).collect();
        let mut hazard: Vec<f64> = (0..cells - 1)
            .map(|k| {
                let s1 = dist.survival((k + 1) as f64 * dtau);
                if s[k] <= 0.0 || s1 <= 0.0 {
                    f64::INFINITY
                } else {
                    (s[k] / s1).ln().max(0.0) / dtau
                }
            })
            .collect();
        let tail_tau = (cells - 1) as f64 * dtau;
        hazard.push(match dist.residual_mean(tail_tau) {
            Ok(r) if r > 0.0 => 1.0 / r,
            _ => f64::INFINITY,
        });
        Ok(Self {
            dist: dist.clone(),
            dtau,
            hazard,
            residuals: OnceLock::new(),
        })
    }

    pub fn dist(&self) -> &ServiceDistribution {
        &self.dist
    }

    pub fn dtau(&self) -> f64 {
        self.dtau
    }

    pub fn cells(&self) -> usize {
        self.hazard.len()
    }

    pub fn hazard(&self) -> &[f64] {
        &self.hazard
    }

    /// Left edge of cell `k`.
    pub fn tau(&self, k: usize) -> f64 {
        k as f64 * self.dtau
    }

    pub fn cell_of(&self, tau: f64) -> usize {
        ((tau / self.dtau).floor().max(0.0) as usize).min(self.cells() - 1)
    }

    /// Per-step completion probabilities `min(h_k Δt, 1)`.
    pub fn completion_probs(&self, dt: f64) -> Vec<f64> {
        self.hazard.iter().map(|h| (h * dt).min(1.0)).collect()
    }

    /// `R(τ_k)` at each left edge, computed once.
    pub fn residuals(&self) -> &[f64] {
        self.residuals.get_or_init(|| {
            let mut last = self.dist.mean();
            (0..self.cells())
                .map(|k| {
                    if let Ok(r) = self.dist.residual_mean(self.tau(k)) {
                        last = r;
                    }
                    last
                })
                .collect()
        })
    }
}
