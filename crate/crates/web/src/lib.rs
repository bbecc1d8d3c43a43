//! Browser bindings: rate curves of the mean-field integrator, single-node
//! stationary profiles and λ* survival profiles of banded chains.

use gjn::chain::{lambda_star, CountableChainSpec, LambdaStarOptions, RoutingMatrix};
use gjn::network::{Mode, NetworkSpec};
use gjn::nlmp::{integrate, stationary_single_node, InitialState, NlmpOptions};
use gjn::service::ServiceDistribution;
use gjn::traffic::solve_traffic;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

fn text(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn to_js<T: Serialize>(v: Result<T, String>) -> Result<JsValue, JsError> {
    let v = v.map_err(|e| JsError::new(&e))?;
    serde_wasm_bindgen::to_value(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// Unit-mean gamma law; shape 1 is the exponential.
fn unit_mean_law(shape: f64) -> ServiceDistribution {
    if shape == 1.0 {
        ServiceDistribution::exponential(1.0)
    } else {
        ServiceDistribution::gamma(shape, 1.0 / shape)
    }
}

#[derive(Deserialize)]
struct RatesInput {
    /// Row-major 2×2 routing.
    routing: [[f64; 2]; 2],
    exogenous: [f64; 2],
    shapes: [f64; 2],
    horizon: f64,
    /// Customers per node at time zero for the second run.
    start: usize,
    cells_per_mean: f64,
}

#[derive(Serialize)]
struct RatesOutput {
    times: Vec<f64>,
    /// `[run][type][sample]`: from empty, then from `start`.
    lambda: [Vec<Vec<f64>>; 2],
    vbar: Vec<f64>,
}

fn rates(p: &RatesInput) -> Result<RatesOutput, String> {
    let rows: Vec<Vec<f64>> = p.routing.iter().map(|r| r.to_vec()).collect();
    if !(p.horizon > 0.0 && p.horizon <= 2000.0) {
        return Err("horizon must lie in (0, 2000]".into());
    }
    let spec = NetworkSpec {
        servers: 1,
        routing: RoutingMatrix::from_dense(&rows).map_err(text)?,
        exogenous: p.exogenous.to_vec(),
        services: p.shapes.iter().map(|&s| unit_mean_law(s)).collect(),
        mode: Mode::Open,
        horizon: p.horizon,
        warmup: 0.0,
        allow_self_routing: true,
        skip_open_check: false,
    };
    let vbar = solve_traffic(&spec.exogenous, &spec.routing, 1e-12, 1_000_000).map_err(text)?.vbar;
    if let Some(rho) = vbar.iter().find(|&&v| v >= 1.0) {
        return Err(format!("overloaded: ρ = {rho:.3} ≥ 1"));
    }
    let cells = p.cells_per_mean.clamp(5.0, 100.0);
    let opts = NlmpOptions {
        cells_per_mean: cells,
        record_every: ((p.horizon * cells / 400.0).ceil() as usize).max(1),
        ..Default::default()
    };
    let point = InitialState::Point { n: p.start.min(50), tau: 0.0 };
    let a = integrate(&spec, p.horizon, &[InitialState::Empty, InitialState::Empty], &opts).map_err(text)?;
    let b = integrate(&spec, p.horizon, &[point.clone(), point], &opts).map_err(text)?;
    Ok(RatesOutput {
        times: a.trace.times,
        lambda: [a.trace.lambda, b.trace.lambda],
        vbar,
    })
}

/// Input rates of a two-type network integrated from empty and from
/// `start` customers per node.
#[wasm_bindgen]
pub fn nlmp_rates(input: JsValue) -> Result<JsValue, JsError> {
    let p: RatesInput = serde_wasm_bindgen::from_value(input).map_err(|e| JsError::new(&e.to_string()))?;
    to_js(rates(&p))
}

#[derive(Serialize)]
struct ProfileOutput {
    nlmp: Vec<f64>,
    geometric: Vec<f64>,
    mean_nlmp: f64,
    mean_geometric: f64,
}

fn profile(rho: f64, shape: f64) -> Result<ProfileOutput, String> {
    if !(rho > 0.0 && rho < 0.95) {
        return Err("load must lie in (0, 0.95)".into());
    }
    if !(shape >= 1.0 && shape <= 20.0) {
        return Err("shape must lie in [1, 20]".into());
    }
    let opts = NlmpOptions {
        cells_per_mean: 40.0,
        ..Default::default()
    };
    let nlmp = stationary_single_node(rho, &unit_mean_law(shape), &opts).map_err(text)?;
    let geometric: Vec<f64> = (0..nlmp.len().max(30)).map(|n| (1.0 - rho) * rho.powi(n as i32)).collect();
    Ok(ProfileOutput {
        mean_nlmp: nlmp.iter().enumerate().map(|(n, x)| n as f64 * x).sum(),
        mean_geometric: rho / (1.0 - rho),
        nlmp,
        geometric,
    })
}

/// Stationary queue-length law of one node at load `rho` with unit-mean
/// gamma service, next to the geometric law of the exponential case.
#[wasm_bindgen]
pub fn stationary_profile(rho: f64, shape: f64) -> Result<JsValue, JsError> {
    to_js(profile(rho, shape))
}

#[derive(Serialize)]
struct SurvivalOutput {
    /// λ*(j) for the monitored states `1..`.
    values: Vec<f64>,
    truncation: usize,
    sup: f64,
    all_zero: bool,
}

fn survival(up: f64, down: f64, truncation: usize) -> Result<SurvivalOutput, String> {
    let k = truncation.clamp(20, 2000);
    let est = lambda_star(&CountableChainSpec::banded(up, down), &[k / 2, k], &LambdaStarOptions::default()).map_err(text)?;
    Ok(SurvivalOutput {
        values: est.values().to_vec(),
        truncation: k,
        sup: est.sup(),
        all_zero: est.all_zero(),
    })
}

/// λ* profile of the banded chain with the given up/down probabilities.
#[wasm_bindgen]
pub fn survival_profile(up: f64, down: f64, truncation: usize) -> Result<JsValue, JsError> {
    to_js(survival(up, down, truncation))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_rates_approach_traffic_solution() {
        let out = rates(&RatesInput {
            routing: [[0.5, 0.5], [0.3, 0.3]],
            exogenous: [0.1, 0.1],
            shapes: [1.0, 1.0],
            horizon: 150.0,
            start: 5,
            cells_per_mean: 10.0,
        })
        .unwrap();
        assert!(out.times.len() > 100 && out.times.len() < 500);
        for run in &out.lambda {
            assert!((run[0].last().unwrap() - out.vbar[0]).abs() < 0.02);
        }
    }

    #[test]
    fn exponential_profile_is_geometric() {
        let p = profile(0.5, 1.0).unwrap();
        assert!((p.mean_nlmp - p.mean_geometric).abs() < 0.05);
        assert!(profile(1.2, 1.0).is_err());
    }

    #[test]
    fn upward_chain_has_positive_survival() {
        let s = survival(0.3, 0.7, 400).unwrap();
        assert!((s.values[0] - 4.0 / 7.0).abs() < 1e-3);
        assert!(survival(0.7, 0.3, 400).unwrap().all_zero);
    }
}
