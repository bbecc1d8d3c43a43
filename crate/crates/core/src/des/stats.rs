use serde::{Deserialize, Serialize};

use super::Probe;
use crate::trace::RateTrace;

/// Everything one simulation run records. Bins start at `t = 0`; the
/// probe, snapshot and time-average fields only cover `[warmup, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub seed: u64,
    pub servers: usize,
    pub types: usize,
    pub horizon: f64,
    pub warmup: f64,
    pub bin_width: f64,
    /// `arrivals[i][k]`: arrivals at type-`i` servers during bin `k`.
    pub arrivals: Vec<Vec<u64>>,
    /// Service completions at type-`i` servers per bin.
    pub departures: Vec<Vec<u64>>,
    pub probes: Vec<Probe>,
    /// Post-warmup arrival epochs at each probe.
    pub probe_arrivals: Vec<Vec<f64>>,
    /// `queue_hist[i][n]`: snapshot count of type-`i` servers holding `n`.
    pub queue_hist: Vec<Vec<u64>>,
    pub snapshots: u64,
    /// Post-warmup time average of customers per server, by type.
    pub mean_queue: Vec<f64>,
    /// Post-warmup time average of all customers in the network.
    pub mean_in_system: f64,
    /// `routed[i][j]` for `j < m`, exits in `routed[i][m]`.
    pub routed: Vec<Vec<u64>>,
    pub exogenous: u64,
    pub exits: u64,
    pub initial: u64,
    pub in_system: u64,
    pub events: u64,
    pub fifo_violations: u64,
    /// Events after which the closed-network count differed from `K`.
    pub conservation_violations: u64,
}

impl SimStats {
    pub(crate) fn new(seed: u64, servers: usize, types: usize, horizon: f64, warmup: f64, bin_width: f64, probes: Vec<Probe>) -> Self {
        let bins = (horizon / bin_width).ceil() as usize;
        Self {
            seed,
            servers,
            types,
            horizon,
            warmup,
            bin_width,
            arrivals: vec![vec![0; bins]; types],
            departures: vec![vec![0; bins]; types],
            probe_arrivals: vec![Vec::new(); probes.len()],
            probes,
            queue_hist: vec![Vec::new(); types],
            snapshots: 0,
            mean_queue: vec![0.0; types],
            mean_in_system: 0.0,
            routed: vec![vec![0; types + 1]; types],
            exogenous: 0,
            exits: 0,
            initial: 0,
            in_system: 0,
            events: 0,
            fifo_violations: 0,
            conservation_violations: 0,
        }
    }

    /// Open networks: customers in minus customers out equals those inside.
    pub fn flow_balanced(&self) -> bool {
        self.initial + self.exogenous == self.exits + self.in_system
    }

    /// Inter-arrival gaps at probe `p`.
    pub fn inter_arrivals(&self, p: usize) -> Vec<f64> {
        self.probe_arrivals[p].windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Probe arrival counts in post-warmup bins of width `width`.
    pub fn probe_counts(&self, p: usize, width: f64) -> Vec<u64> {
        let bins = ((self.horizon - self.warmup) / width).floor() as usize;
        let mut counts = vec![0; bins];
        for &t in &self.probe_arrivals[p] {
            let k = ((t - self.warmup) / width) as usize;
            if k < bins {
                counts[k] += 1;
            }
        }
        counts
    }

    /// Post-warmup queue-length law of type `i` from snapshots.
    pub fn queue_marginal(&self, i: usize) -> Vec<f64> {
        let total: u64 = self.queue_hist[i].iter().sum();
        self.queue_hist[i].iter().map(|&c| c as f64 / total.max(1) as f64).collect()
    }

    /// First post-warmup bin index.
    pub fn warm_bin(&self) -> usize {
        (self.warmup / self.bin_width).ceil() as usize
    }
}

/// Per-server rates `count / (N · width)` in bins of `width`, which is
/// rounded to a whole number of recorded bins.
pub fn empirical_rates(stats: &SimStats, width: f64) -> RateTrace {
    let group = ((width / stats.bin_width).round() as usize).max(1);
    let w = group as f64 * stats.bin_width;
    let norm = stats.servers as f64 * w;
    let bins = stats.arrivals.first().map_or(0, Vec::len) / group;
    let mut trace = RateTrace::new(stats.types, false);
    let sum = |v: &[u64], k: usize| v[k * group..(k + 1) * group].iter().sum::<u64>() as f64 / norm;
    for k in 0..bins {
        let l: Vec<f64> = stats.arrivals.iter().map(|a| sum(a, k)).collect();
        let b: Vec<f64> = stats.departures.iter().map(|d| sum(d, k)).collect();
        trace.push(k as f64 * w, &l, &b, None);
    }
    trace
}
