//! Finite-`N` event-driven simulation: `N·m` FIFO servers, per-server
//! Poisson inflow, probabilistic routing and uniform server choice.

mod engine;
mod replicate;
mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::run;
pub use replicate::{pooled_mean_in_system, replicate, replicate_with, PooledMean};
pub use stats::{empirical_rates, SimStats};

use crate::network::SpecError;
use crate::service::ServiceError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    InvalidSpec(#[from] SpecError),
    #[error("service law of type {index}: {source}")]
    Service { index: usize, source: ServiceError },
    #[error("queue at type {ty} server {server} exceeded {cap} customers at t = {t}")]
    QueueExplosion { ty: usize, server: usize, cap: usize, t: f64 },
    #[error("probe type {ty} server {server} is out of range")]
    Probe { ty: usize, server: usize },
    #[error("{0}")]
    Options(String),
    #[error("seed {seed}: {source}")]
    Replication { seed: u64, source: Box<SimError> },
}

/// A monitored server, 1-based `[type, server]` in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct Probe {
    pub ty: usize,
    pub server: usize,
}

impl TryFrom<(usize, usize)> for Probe {
    type Error = String;

    fn try_from((ty, server): (usize, usize)) -> Result<Self, Self::Error> {
        if ty == 0 || server == 0 {
            return Err(format!("probe [{ty}, {server}] is 1-based"));
        }
        Ok(Probe { ty: ty - 1, server: server - 1 })
    }
}

impl From<Probe> for (usize, usize) {
    fn from(p: Probe) -> Self {
        (p.ty + 1, p.server + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Width of the per-type arrival/departure count bins.
    pub bin_width: f64,
    pub probes: Vec<Probe>,
    /// Spacing of post-warmup queue-length snapshots.
    pub snapshot_every: f64,
    pub queue_cap: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            bin_width: 1.0,
            probes: Vec::new(),
            snapshot_every: 1.0,
            queue_cap: 1_000_000,
        }
    }
}

impl SimOptions {
    /// The first `per_type` servers of every type.
    pub fn with_probes(mut self, types: usize, per_type: usize) -> Self {
        self.probes = (0..types)
            .flat_map(|ty| (0..per_type).map(move |server| Probe { ty, server }))
            .collect();
        self
    }
}
