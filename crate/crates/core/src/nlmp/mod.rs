//! Mean-field limit of the network: per-type measures over queue states
//! `(n, τ)` driven by Poisson inflow at rate `λ_i(t)` and coupled through
//! the output rates `b_i(t)`.

mod grid;
mod measure;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::ServiceGrid;
pub use measure::{NodeMeasure, NodeStepper, StepOutcome, DUST};

use crate::network::{NetworkSpec, SpecError};
use crate::service::{ServiceDistribution, ServiceError};
use crate::trace::RateTrace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlmpError {
    #[error(transparent)]
    Service(ServiceError),
    #[error("grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("type {index}: total mass drifted by {drift:e} at t = {t}")]
    MassLoss { index: usize, drift: f64, t: f64 },
    #[error("type {index}: mass {overflow:e} beyond n_max = {n_max} at t = {t}")]
    OverflowBreach { index: usize, overflow: f64, n_max: usize, t: f64 },
    #[error("{0}")]
    StepTooLarge(String),
    #[error("λ·E(η) = {load} ≥ 1")]
    Overloaded { load: f64 },
    #[error("no stationary profile by t = {t}: last L1 change {change:e}")]
    NotConverged { t: f64, change: f64 },
    #[error("expected service time is not finite")]
    Infinite,
    #[error("initial state: {0}")]
    InitialState(String),
}

/// Starting configuration of one type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    #[default]
    Empty,
    /// `n` customers, the head one with elapsed service `tau`.
    Point {
        n: usize,
        #[serde(default)]
        tau: f64,
    },
    /// Queue-length law `probs[n]`, all services fresh.
    Queue { probs: Vec<f64> },
}

impl InitialState {
    pub fn build(&self, grid: &ServiceGrid, n_max: usize) -> Result<NodeMeasure, NlmpError> {
        let rows = match self {
            InitialState::Empty => 0,
            InitialState::Point { n, .. } => *n,
            InitialState::Queue { probs } => probs.len().saturating_sub(1),
        };
        if rows > n_max {
            return Err(NlmpError::InitialState(format!("{rows} customers exceeds n_max = {n_max}")));
        }
        match self {
            InitialState::Empty => Ok(NodeMeasure::empty(grid.cells())),
            InitialState::Point { n, tau } => {
                if !(tau.is_finite() && *tau >= 0.0) {
                    return Err(NlmpError::InitialState(format!("elapsed service {tau} must be ≥ 0")));
                }
                Ok(NodeMeasure::point(grid.cells(), *n, grid.cell_of(*tau)))
            }
            InitialState::Queue { probs } => NodeMeasure::from_queue_law(grid.cells(), probs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlmpOptions {
    /// Time step; the finest `Δτ` over types when absent.
    pub dt: Option<f64>,
    /// `Δτ = E(η) / cells_per_mean`.
    pub cells_per_mean: f64,
    /// Grid ends at the `1 − tail_quantile` service quantile.
    pub tail_quantile: f64,
    pub n_max: usize,
    pub overflow_bound: f64,
    /// Trace sampling stride in steps.
    pub record_every: usize,
    /// L1 change of the queue law that counts as stationary.
    pub stationary_tol: f64,
    /// Give up on stationarity after this long.
    pub max_time: f64,
}

impl Default for NlmpOptions {
    fn default() -> Self {
        Self {
            dt: None,
            cells_per_mean: 200.0,
            tail_quantile: 1e-8,
            n_max: 200,
            overflow_bound: 1e-6,
            record_every: 1,
            stationary_tol: 1e-7,
            max_time: 1e4,
        }
    }
}

impl NlmpOptions {
    pub fn grid(&self, dist: &ServiceDistribution) -> Result<ServiceGrid, NlmpError> {
        if !(self.cells_per_mean.is_finite() && self.cells_per_mean >= 1.0) {
            return Err(NlmpError::Grid(format!("cells_per_mean = {} must be ≥ 1", self.cells_per_mean)));
        }
        ServiceGrid::new(dist, dist.mean() / self.cells_per_mean, self.tail_quantile)
    }

    fn step_for(&self, grids: &[ServiceGrid]) -> f64 {
        self.dt
            .unwrap_or_else(|| grids.iter().map(ServiceGrid::dtau).fold(f64::INFINITY, f64::min))
    }
}

/// Output of [`integrate`].
#[derive(Debug, Clone)]
pub struct NlmpRun {
    pub trace: RateTrace,
    pub measures: Vec<NodeMeasure>,
    pub grids: Vec<ServiceGrid>,
    pub dt: f64,
    pub steps: usize,
}

impl NlmpRun {
    /// `Σ_i mean_customers(μ_i)` at the end of the run.
    pub fn total_customers(&self) -> f64 {
        self.measures.iter().map(mean_customers).sum()
    }

    /// Writes `type,n,tau,mass` rows (1-based types, `n = 0` for the empty
    /// state, `tau` the left cell edge), skipping zero masses.
    pub fn write_measures_csv(&self, w: impl Write) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["type", "n", "tau", "mass"])?;
        for (i, (mu, g)) in self.measures.iter().zip(&self.grids).enumerate() {
            let ty = (i + 1).to_string();
            wtr.write_record([ty.as_str(), "0", "0", &mu.p_empty.to_string()])?;
            for (r, row) in mu.rows().iter().enumerate() {
                for (k, &m) in row.iter().enumerate() {
                    if m != 0.0 {
                        wtr.write_record([ty.clone(), (r + 1).to_string(), g.tau(k).to_string(), m.to_string()])?;
                    }
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn mean_customers(mu: &NodeMeasure) -> f64 {
    mu.mean_len()
}

/// `E[(n − 1)E(η) + R(τ)]` under the measure, `R` taken at cell left edges.
pub fn expected_service_time(mu: &NodeMeasure, grid: &ServiceGrid) -> Result<f64, NlmpError> {
    let mean = grid.dist().mean();
    let residual = grid.residuals();
    let mut s = 0.0;
    for (r, row) in mu.rows().iter().enumerate() {
        let queued = r as f64 * mean;
        s += row.iter().zip(residual).map(|(m, rr)| m * (queued + rr)).sum::<f64>();
    }
    if s.is_finite() {
        Ok(s)
    } else {
        Err(NlmpError::Infinite)
    }
}

struct Node {
    mu: NodeMeasure,
    stepper: NodeStepper,
    b: f64,
    fail: Option<NlmpError>,
}

fn advance(node: &mut Node, index: usize, lambda: f64, dt: f64, t: f64, opts: &NlmpOptions) {
    let out = node.stepper.step(&mut node.mu, lambda * dt);
    node.b = out.next_b;
    let total = node.mu.total_mass();
    let drift = (total - 1.0).abs();
    if drift > 1e-6 * t.max(1.0) {
        node.fail = Some(NlmpError::MassLoss { index, drift, t });
    } else if drift > 1e-13 && drift <= 1e-9 {
        node.mu.scale(1.0 / total);
    }
    if node.mu.overflow > opts.overflow_bound {
        node.fail = Some(NlmpError::OverflowBreach {
            index,
            overflow: node.mu.overflow,
            n_max: opts.n_max,
            t,
        });
    }
}

fn for_each_node(nodes: &mut [Node], f: impl Fn(usize, &mut Node) + Sync + Send) {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if nodes.len() > 1 {
            nodes.par_iter_mut().enumerate().for_each(|(i, n)| f(i, n));
            return;
        }
    }
    nodes.iter_mut().enumerate().for_each(|(i, n)| f(i, n));
}

/// Integrates the coupled system on `[0, horizon]`. Open networks use
/// `λ = v + bP`, closed ones `λ = bP`.
pub fn integrate(
    spec: &NetworkSpec,
    horizon: f64,
    init: &[InitialState],
    opts: &NlmpOptions,
) -> Result<NlmpRun, NlmpError> {
    spec.validate()?;
    let m = spec.types();
    if init.len() != m {
        return Err(NlmpError::InitialState(format!("{} initial states for {m} types", init.len())));
    }
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(NlmpError::Grid(format!("horizon {horizon} must be ≥ 0")));
    }
    let grids = spec.services.iter().map(|d| opts.grid(d)).collect::<Result<Vec<_>, _>>()?;
    let dt = opts.step_for(&grids);
    let mut nodes = Vec::with_capacity(m);
    for (g, s) in grids.iter().zip(init) {
        let stepper = NodeStepper::new(g, dt, opts.n_max)?;
        let mu = s.build(g, opts.n_max)?;
        let b = mu.output_rate(stepper.q(), dt);
        nodes.push(Node { mu, stepper, b, fail: None });
    }
    let exo: Vec<f64> = if spec.is_closed() { vec![0.0; m] } else { spec.exogenous.clone() };
    let steps = (horizon / dt).round() as usize;
    let every = opts.record_every.max(1);
    let mut trace = RateTrace::new(m, true);
    let mut lambda = vec![0.0; m];
    let mut b = vec![0.0; m];
    for step in 0..=steps {
        let t = step as f64 * dt;
        for (bi, n) in b.iter_mut().zip(&nodes) {
            *bi = n.b;
        }
        spec.routing.left_mul_into(&b, &mut lambda);
        for (l, v) in lambda.iter_mut().zip(&exo) {
            *l += v;
        }
        if step % every == 0 || step == steps {
            let q: Vec<f64> = nodes.iter().map(|n| n.mu.mean_len()).collect();
            trace.push(t, &lambda, &b, Some(&q));
        }
        if step == steps {
            break;
        }
        let lam = &lambda;
        for_each_node(&mut nodes, |i, n| advance(n, i, lam[i], dt, t + dt, opts));
        if let Some(e) = nodes.iter_mut().find_map(|n| n.fail.take()) {
            return Err(e);
        }
    }
    Ok(NlmpRun {
        trace,
        measures: nodes.into_iter().map(|n| n.mu).collect(),
        grids,
        dt,
        steps,
    })
}

/// Stationary queue-length law of one node fed at constant rate `λ`.
pub fn stationary_single_node(
    lambda: f64,
    dist: &ServiceDistribution,
    opts: &NlmpOptions,
) -> Result<Vec<f64>, NlmpError> {
    let load = lambda * dist.mean();
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(NlmpError::Grid(format!("rate {lambda} must be ≥ 0")));
    }
    if lambda == 0.0 {
        return Ok(vec![1.0]);
    }
    if load >= 1.0 {
        return Err(NlmpError::Overloaded { load });
    }
    let grid = opts.grid(dist)?;
    let dt = opts.step_for(std::slice::from_ref(&grid));
    let mut node = Node {
        mu: NodeMeasure::empty(grid.cells()),
        stepper: NodeStepper::new(&grid, dt, opts.n_max)?,
        b: 0.0,
        fail: None,
    };
    // Chunks of a few mean services, compared end to end.
    let chunk = ((5.0 * dist.mean() / dt).ceil() as usize).max(1);
    let mut last = node.mu.queue_law();
    let mut t = 0.0;
    loop {
        for _ in 0..chunk {
            t += dt;
            advance(&mut node, 0, lambda, dt, t, opts);
            if let Some(e) = node.fail.take() {
                return Err(e);
            }
        }
        let now = node.mu.queue_law();
        let len = now.len().max(last.len());
        let change: f64 = (0..len)
            .map(|n| (now.get(n).unwrap_or(&0.0) - last.get(n).unwrap_or(&0.0)).abs())
            .sum();
        if change < opts.stationary_tol {
            return Ok(now);
        }
        if t >= opts.max_time {
            return Err(NlmpError::NotConverged { t, change });
        }
        last = now;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::RoutingMatrix;
    use crate::network::Mode;
    use crate::trace::detect_flattening_over;

    fn coarse() -> NlmpOptions {
        NlmpOptions {
            cells_per_mean: 50.0,
            record_every: 10,
            ..NlmpOptions::default()
        }
    }

    fn single(lambda: f64) -> NetworkSpec {
        NetworkSpec {
            servers: 1,
            routing: RoutingMatrix::zeros(1),
            exogenous: vec![lambda],
            services: vec![ServiceDistribution::exponential(1.0)],
            mode: Mode::Open,
            horizon: 0.0,
            warmup: 0.0,
            allow_self_routing: true,
            skip_open_check: true,
        }
    }

    #[test]
    fn zero_inflow_keeps_rates_zero() {
        let run = integrate(&single(0.0), 5.0, &[InitialState::Empty], &coarse()).unwrap();
        assert!(run.trace.lambda[0].iter().chain(&run.trace.b[0]).all(|&x| x == 0.0));
        assert_eq!(run.measures[0].p_empty, 1.0);
    }

    #[test]
    fn mm1_idle_probability() {
        let run = integrate(&single(0.5), 200.0, &[InitialState::Empty], &coarse()).unwrap();
        let mu = &run.measures[0];
        assert!((mu.p_empty - 0.5).abs() < 0.01, "{}", mu.p_empty);
        assert!((mean_customers(mu) - 1.0).abs() < 0.02);
    }

    #[test]
    fn open_trace_is_the_balance_identity() {
        let spec = NetworkSpec::reference(1);
        let run = integrate(&spec, 20.0, &[InitialState::Empty, InitialState::Point { n: 3, tau: 0.5 }], &coarse())
            .unwrap();
        let tr = &run.trace;
        for k in 0..tr.len() {
            for i in 0..2 {
                let expect = spec.exogenous[i] + (0..2).map(|j| tr.b[j][k] * spec.routing.get(j, i)).sum::<f64>();
                assert!((tr.lambda[i][k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reference_flattens_to_traffic_solution() {
        let spec = NetworkSpec::reference(1);
        let run = integrate(&spec, 300.0, &[InitialState::Empty, InitialState::Empty], &coarse()).unwrap();
        let f = detect_flattening_over(&run.trace, 50.0, 1e-3).unwrap();
        for l in f.lambda_hat.iter().chain(&f.b_hat) {
            assert!((l - 0.5).abs() < 0.005, "{l}");
        }
    }

    #[test]
    fn closed_network_keeps_its_customers() {
        let spec = NetworkSpec {
            routing: RoutingMatrix::from_dense(&[vec![0.4, 0.6], vec![0.7, 0.3]]).unwrap(),
            exogenous: vec![0.0, 0.0],
            services: vec![ServiceDistribution::exponential(1.0), ServiceDistribution::gamma(2.0, 0.25)],
            mode: Mode::Closed { customers: 8, placement: None },
            ..NetworkSpec::reference(1)
        };
        let init = [InitialState::Point { n: 5, tau: 0.0 }, InitialState::Point { n: 3, tau: 0.2 }];
        let run = integrate(&spec, 50.0, &init, &coarse()).unwrap();
        assert!((run.total_customers() - 8.0).abs() < 1e-9 * 8.0, "{}", run.total_customers());
    }

    #[test]
    fn stationary_profiles() {
        let opts = NlmpOptions {
            cells_per_mean: 50.0,
            stationary_tol: 1e-6,
            ..NlmpOptions::default()
        };
        assert_eq!(stationary_single_node(0.0, &ServiceDistribution::exponential(1.0), &opts).unwrap(), vec![1.0]);
        let nu = stationary_single_node(0.5, &ServiceDistribution::exponential(1.0), &opts).unwrap();
        let tv: f64 = 0.5
            * (0..nu.len() + 50)
                .map(|n| (nu.get(n).copied().unwrap_or(0.0) - 0.5f64.powi(n as i32 + 1)).abs())
                .sum::<f64>();
        assert!(tv < 0.01, "{tv}");
        let g = stationary_single_node(0.5, &ServiceDistribution::gamma(2.0, 0.5), &opts).unwrap();
        assert!((g[0] - 0.5).abs() < 0.01, "{}", g[0]);
        assert!(matches!(
            stationary_single_node(1.0, &ServiceDistribution::exponential(1.0), &opts),
            Err(NlmpError::Overloaded { .. })
        ));
    }

    #[test]
    fn service_time_examples() {
        let exp2 = ServiceGrid::new(&ServiceDistribution::exponential(0.5), 0.02, 1e-8).unwrap();
        assert_eq!(expected_service_time(&NodeMeasure::empty(exp2.cells()), &exp2).unwrap(), 0.0);
        let three = NodeMeasure::point(exp2.cells(), 3, exp2.cell_of(1.3));
        assert!((expected_service_time(&three, &exp2).unwrap() - 6.0).abs() < 1e-6);
        let gam = ServiceGrid::new(&ServiceDistribution::gamma(2.0, 1.0), 0.02, 1e-8).unwrap();
        let two = NodeMeasure::point(gam.cells(), 2, 0);
        assert!((expected_service_time(&two, &gam).unwrap() - 4.0).abs() < 1e-6);
        assert_eq!(mean_customers(&NodeMeasure::point(gam.cells(), 5, 7)), 5.0);
    }

    #[test]
    fn initial_state_json() {
        let s: InitialState = serde_json::from_str(r#"{"kind":"point","n":10}"#).unwrap();
        assert_eq!(s, InitialState::Point { n: 10, tau: 0.0 });
        let g = ServiceGrid::new(&ServiceDistribution::exponential(1.0), 0.1, 1e-8).unwrap();
        assert!(InitialState::Point { n: 300, tau: 0.0 }.build(&g, 200).is_err());
    }
}
