//! Service-time laws: density, survival, hazard, residual mean, sampling
//! and the regularity validator.

mod regularity;
mod tabulated;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_ur, ln_gamma};
use thiserror::Error;

use crate::quad;

pub use regularity::{validate_regularity, ConditionReport, ConditionStatus, RegularityOptions, RegularityReport};
pub use tabulated::Tabulated;

/// Survival below this is treated as the end of the numerical support.
pub const TAIL_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("invalid {family} parameter: {reason}")]
    InvalidParameter { family: &'static str, reason: String },
    #[error("tau = {tau} is beyond the numerical support (survival {survival:.3e})")]
    TailExhausted { tau: f64, survival: f64 },
    #[error("{0} has no density")]
    NoDensity(&'static str),
    #[error("tabulated density: {0}")]
    Table(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceDistribution {
    Exponential {
        rate: f64,
    },
    Gamma {
        shape: f64,
        scale: f64,
    },
    Hyperexponential {
        probs: Vec<f64>,
        rates: Vec<f64>,
    },
    Lognormal {
        mu: f64,
        sigma: f64,
    },
    Deterministic {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Tabulated(Tabulated),
}

fn invalid(family: &'static str, reason: impl Into<String>) -> ServiceError {
    ServiceError::InvalidParameter {
        family,
        reason: reason.into(),
    }
}

fn positive(family: &'static str, name: &str, x: f64) -> Result<(), ServiceError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(invalid(family, format!("{name} = {x} must be finite and positive")))
    }
}

impl ServiceDistribution {
    pub fn exponential(rate: f64) -> Self {
        Self::Exponential { rate }
    }

    pub fn gamma(shape: f64, scale: f64) -> Self {
        Self::Gamma { shape, scale }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::Exponential { .. } => "exponential",
            Self::Gamma { .. } => "gamma",
            Self::Hyperexponential { .. } => "hyperexponential",
            Self::Lognormal { .. } => "lognormal",
            Self::Deterministic { .. } => "deterministic",
            Self::Uniform { .. } => "uniform",
            Self::Tabulated(_) => "tabulated",
        }
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let fam = self.family();
        match self {
            Self::Exponential { rate } => positive(fam, "rate", *rate),
            Self::Gamma { shape, scale } => {
                positive(fam, "shape", *shape)?;
                positive(fam, "scale", *scale)
            }
            Self::Hyperexponential { probs, rates } => {
                if probs.is_empty() || probs.len() != rates.len() {
                    return Err(invalid(fam, "probs and rates must be non-empty and of equal length"));
                }
                for &r in rates {
                    positive(fam, "rate", r)?;
                }
                if probs.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
                    return Err(invalid(fam, "branch probabilities must be nonnegative"));
                }
                let s: f64 = probs.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(invalid(fam, format!("branch probabilities sum to {s}")));
                }
                Ok(())
            }
            Self::Lognormal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(invalid(fam, "mu must be finite"));
                }
                positive(fam, "sigma", *sigma)
            }
            Self::Deterministic { value } => positive(fam, "value", *value),
            Self::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && *low >= 0.0 && high > low) {
                    return Err(invalid(fam, format!("need 0 ≤ low < high, got [{low}, {high}]")));
                }
                Ok(())
            }
            Self::Tabulated(_) => Ok(()),
        }
    }

    pub fn has_density(&self) -> bool {
        !matches!(self, Self::Deterministic { .. })
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Gamma { shape, scale } => shape * scale,
            Self::Hyperexponential { probs, rates } => probs.iter().zip(rates).map(|(p, r)| p / r).sum(),
            Self::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Self::Deterministic { value } => *value,
            Self::Uniform { low, high } => 0.5 * (low + high),
            Self::Tabulated(t) => t.mean(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 1.0 / (rate * rate),
            Self::Gamma { shape, scale } => shape * scale * scale,
            Self::Hyperexponential { probs, rates } => {
                let m2: f64 = probs.iter().zip(rates).map(|(p, r)| 2.0 * p / (r * r)).sum();
                m2 - self.mean().powi(2)
            }
            Self::Lognormal { mu, sigma } => {
                let s2 = sigma * sigma;
                (s2.exp() - 1.0) * (2.0 * mu + s2).exp()
            }
            Self::Deterministic { .. } => 0.0,
            Self::Uniform { low, high } => (high - low).powi(2) / 12.0,
            Self::Tabulated(t) => t.variance(),
        }
    }

    /// Density `p(t)`; zero for `t < 0`. The deterministic law has none and
    /// reports zero everywhere.
    pub fn density(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => rate * (-rate * t).exp(),
            Self::Gamma { shape, scale } => {
                let x = t / scale;
                if x == 0.0 {
                    return match shape.partial_cmp(&1.0) {
                        Some(std::cmp::Ordering::Less) => f64::INFINITY,
                        Some(std::cmp::Ordering::Equal) => 1.0 / scale,
                        _ => 0.0,
                    };
                }
                ((shape - 1.0) * x.ln() - x - ln_gamma(*shape)).exp() / scale
            }
            Self::Hyperexponential { probs, rates } => probs.iter().zip(rates).map(|(p, r)| p * r * (-r * t).exp()).sum(),
            Self::Lognormal { mu, sigma } => {
                if t == 0.0 {
                    return 0.0;
                }
                let z = (t.ln() - mu) / sigma;
                (-0.5 * z * z).exp() / (t * sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            Self::Deterministic { .. } => 0.0,
            Self::Uniform { low, high } => {
                if (*low..=*high).contains(&t) {
                    1.0 / (high - low)
                } else {
                    0.0
                }
            }
            Self::Tabulated(tab) => tab.density(t),
        }
    }

    /// `S(t) = 1 − F(t)`, computed directly to keep the upper tail accurate.
    pub fn survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match self {
            Self::Exponential { rate } => (-rate * t).exp(),
            Self::Gamma { shape, scale } => gamma_ur(*shape, t / scale),
            Self::Hyperexponential { probs, rates } => probs.iter().zip(rates).map(|(p, r)| p * (-r * t).exp()).sum(),
            Self::Lognormal { mu, sigma } => 0.5 * erfc((t.ln() - mu) / (sigma * std::f64::consts::SQRT_2)),
            Self::Deterministic { value } => {
                if t < *value {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Uniform { low, high } => ((high - t) / (high - low)).clamp(0.0, 1.0),
            Self::Tabulated(tab) => tab.survival(t),
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        1.0 - self.survival(t)
    }

    fn check_tail(&self, tau: f64) -> Result<f64, ServiceError> {
        let survival = self.survival(tau);
        if survival <= TAIL_EPS {
            return Err(ServiceError::TailExhausted { tau, survival });
        }
        Ok(survival)
    }

    /// `h(τ) = p(τ) / S(τ)`, the density of the residual time at zero.
    pub fn hazard_at(&self, tau: f64) -> Result<f64, ServiceError> {
        if !self.has_density() {
            return Err(ServiceError::NoDensity("deterministic service"));
        }
        let s = self.check_tail(tau)?;
        Ok(match self {
            Self::Exponential { rate } => *rate,
            _ => self.density(tau) / s,
        })
    }

    /// `t` with `S(t) = s`, for `s ∈ (0, 1)`.
    pub fn upper_quantile(&self, s: f64) -> f64 {
        match self {
            Self::Exponential { rate } => -s.ln() / rate,
            Self::Deterministic { value } => *value,
            Self::Uniform { low, high } => high - s * (high - low),
            _ => {
                let mut hi = self.mean().max(1e-12);
                while self.survival(hi) > s {
                    hi *= 2.0;
                    if !hi.is_finite() {
                        return f64::INFINITY;
                    }
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.survival(mid) > s {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-14 * hi {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    pub fn quantile(&self, q: f64) -> f64 {
        self.upper_quantile(1.0 - q)
    }

    /// `∫₀^∞ g(t) p(t + τ) dt / S(τ)` by adaptive quadrature, truncated where
    /// the conditional tail falls below 1e-16.
    fn conditional_expectation(&self, tau: f64, s_tau: f64, g: impl Fn(f64) -> f64) -> f64 {
        let end = self.upper_quantile((s_tau * 1e-16).max(f64::MIN_POSITIVE)) - tau;
        if let Self::Uniform { high, .. } = self {
            let end = high - tau;
            return quad::integrate(|t| g(t) * self.density(t + tau), 0.0, end, 1e-15, 1e-12) / s_tau;
        }
        let w = (self.mean() / 4.0).min(end.max(1e-12));
        quad::integrate_geometric(|t| g(t) * self.density(t + tau), 0.0, end.max(0.0), w, 1e-16, 1e-12) / s_tau
    }

    /// `R(τ) = E(η − τ | η > τ)`.
    pub fn residual_mean(&self, tau: f64) -> Result<f64, ServiceError> {
        let s = self.check_tail(tau)?;
        Ok(match self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Deterministic { value } => value - tau,
            _ => self.conditional_expectation(tau, s, |t| t),
        })
    }

    /// `E((η − τ)^k | η > τ)`.
    pub fn residual_moment(&self, tau: f64, k: f64) -> Result<f64, ServiceError> {
        let s = self.check_tail(tau)?;
        Ok(match self {
            Self::Exponential { rate } => statrs::function::gamma::gamma(k + 1.0) / rate.powf(k),
            Self::Deterministic { value } => (value - tau).powf(k),
            _ => self.conditional_expectation(tau, s, |t| t.powf(k)),
        })
    }

    /// Builds a sampler with precomputed constants.
    pub fn sampler(&self) -> Result<ServiceSampler, ServiceError> {
        self.validate()?;
        let bad = |e: String| invalid(self.family(), e);
        Ok(match self {
            Self::Exponential { rate } => ServiceSampler::Exp(Exp::new(*rate).map_err(|e| bad(e.to_string()))?),
            Self::Gamma { shape, scale } => {
                ServiceSampler::Gamma(Gamma::new(*shape, *scale).map_err(|e| bad(e.to_string()))?)
            }
            Self::Hyperexponential { probs, rates } => {
                let mut cum = Vec::with_capacity(probs.len());
                let mut acc = 0.0;
                for p in probs {
                    acc += p;
                    cum.push(acc);
                }
                let branches = rates
                    .iter()
                    .map(|&r| Exp::new(r).map_err(|e| bad(e.to_string())))
                    .collect::<Result<_, _>>()?;
                ServiceSampler::Hyper { cum, branches }
            }
            Self::Lognormal { mu, sigma } => {
                ServiceSampler::LogNormal(LogNormal::new(*mu, *sigma).map_err(|e| bad(e.to_string()))?)
            }
            Self::Deterministic { value } => ServiceSampler::Fixed(*value),
            Self::Uniform { low, high } => ServiceSampler::Uniform(*low, *high),
            Self::Tabulated(t) => ServiceSampler::Table(t.clone()),
        })
    }

    /// One draw. Prefer [`ServiceDistribution::sampler`] in loops.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, ServiceError> {
        Ok(self.sampler()?.sample(rng))
    }
}

#[derive(Debug, Clone)]
pub enum ServiceSampler {
    Exp(Exp<f64>),
    Gamma(Gamma<f64>),
    Hyper { cum: Vec<f64>, branches: Vec<Exp<f64>> },
    LogNormal(LogNormal<f64>),
    Fixed(f64),
    Uniform(f64, f64),
    Table(Tabulated),
}

impl ServiceSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Exp(d) => d.sample(rng),
            Self::Gamma(d) => d.sample(rng),
            Self::Hyper { cum, branches } => {
                let u: f64 = rng.random();
                let k = cum.iter().position(|&c| u < c).unwrap_or(branches.len() - 1);
                branches[k].sample(rng)
            }
            Self::LogNormal(d) => d.sample(rng),
            Self::Fixed(v) => *v,
            Self::Uniform(lo, hi) => lo + (hi - lo) * rng.random::<f64>(),
            Self::Table(t) => t.inverse_cdf(rng.random()),
        }
    }
}
