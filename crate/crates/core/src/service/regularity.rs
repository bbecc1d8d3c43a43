//! Grid certification of the five service-time regularity conditions:
//!
//! 1. density positive on `t ≥ 0` and bounded;
//! 2. `|p(t+Δ) − p(t)| ≤ C p(t) |Δ|` for `|Δ| < 1`, `t + Δ > 0`;
//! 3. `E((η − τ)^{2+δ} | η > τ) < M`;
//! 4. hazard `h(τ)` and `h'(τ)` bounded;
//! 5. `lim h(τ)` and `lim h'(τ)` exist and are finite.
//!
//! The grid is finite, so tails are taken from the analytic form of the
//! built-in families. Tabulated densities only get grid-level status.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ServiceDistribution, TAIL_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionStatus {
    Pass,
    Fail,
    /// Holds on the grid; no analytic tail to extend it.
    GridOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: u8,
    pub name: String,
    pub status: ConditionStatus,
    pub witness: BTreeMap<String, f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub family: String,
    pub conditions: Vec<ConditionReport>,
    pub overall: ConditionStatus,
    pub delta: f64,
    pub t_max: f64,
    /// `(τ, E((η − τ)^{2+δ} | η > τ))` on the moment grid.
    pub moment_profile: Vec<(f64, f64)>,
}

impl RegularityReport {
    pub fn condition(&self, k: u8) -> &ConditionReport {
        &self.conditions[usize::from(k - 1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularityOptions {
    pub delta: f64,
    pub points: usize,
    /// Grid end; defaults to 1.25 times the `1 − 1e-6` quantile.
    pub t_max: Option<f64>,
    pub moment_points: usize,
}

impl Default for RegularityOptions {
    fn default() -> Self {
        Self {
            delta: 0.5,
            points: 2000,
            t_max: None,
            moment_points: 40,
        }
    }
}

const OFFSETS: [f64; 3] = [0.25, 0.5, 0.999];

/// Analytic `(lim h, lim h')`; `None` when the hazard is unbounded or the
/// family has no closed-form tail.
fn tail_limits(d: &ServiceDistribution) -> Option<(f64, f64)> {
    match d {
        ServiceDistribution::Exponential { rate } => Some((*rate, 0.0)),
        ServiceDistribution::Gamma { scale, .. } => Some((1.0 / scale, 0.0)),
        ServiceDistribution::Hyperexponential { probs, rates } => {
            let r = probs
                .iter()
                .zip(rates)
                .filter(|(p, _)| **p > 0.0)
                .map(|(_, r)| *r)
                .fold(f64::INFINITY, f64::min);
            Some((r, 0.0))
        }
        ServiceDistribution::Lognormal { .. } => Some((0.0, 0.0)),
        _ => None,
    }
}

fn report(condition: u8, name: &str, status: ConditionStatus, witness: &[(&str, f64)], detail: String) -> ConditionReport {
    ConditionReport {
        condition,
        name: name.into(),
        status,
        witness: witness.iter().map(|(k, v)| ((*k).to_string(), *v)).collect(),
        detail,
    }
}

fn status(ok: bool, analytic: bool) -> ConditionStatus {
    match (ok, analytic) {
        (false, _) => ConditionStatus::Fail,
        (true, true) => ConditionStatus::Pass,
        (true, false) => ConditionStatus::GridOnly,
    }
}

pub fn validate_regularity(d: &ServiceDistribution, opts: &RegularityOptions) -> RegularityReport {
    use ConditionStatus::*;
    let analytic = !matches!(d, ServiceDistribution::Tabulated(_));
    let q = d.upper_quantile(1e-6);
    let t_max = opts.t_max.unwrap_or(1.25 * q).max(q);
    let n = opts.points.max(10);
    let h = t_max / n as f64;
    let grid: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
    let mut conditions = Vec::with_capacity(5);

    if !d.has_density() {
        let no = |k: u8, name: &str| report(k, name, Fail, &[], "point mass: no density exists".into());
        conditions.push(report(
            1,
            "positive bounded density",
            Fail,
            &[("atom_t", d.mean())],
            format!("point mass at t = {}: no density exists", d.mean()),
        ));
        conditions.push(no(2, "strong Lipschitz"));
        let mut profile = Vec::new();
        let mut sup: f64 = 0.0;
        for &tau in grid.iter().step_by((n / opts.moment_points.max(1)).max(1)) {
            if let Ok(m) = d.residual_moment(tau, 2.0 + opts.delta) {
                profile.push((tau, m));
                sup = sup.max(m);
            }
        }
        conditions.push(report(3, "residual moment", Pass, &[("sup_moment", sup)], "bounded support".into()));
        conditions.push(no(4, "bounded hazard"));
        conditions.push(no(5, "hazard limits"));
        return finish(d, conditions, opts.delta, t_max, profile);
    }

    // 1. Positivity and boundedness.
    let dens: Vec<f64> = grid.iter().map(|&t| d.density(t)).collect();
    let first_zero = grid.iter().zip(&dens).find(|(_, &p)| !(p > 0.0)).map(|(&t, _)| t);
    let sup_density = dens.iter().copied().fold(0.0, f64::max);
    let bounded = sup_density.is_finite();
    let mut w = vec![("sup_density", sup_density)];
    if let Some(t) = first_zero {
        w.push(("first_zero_t", t));
    }
    let detail = match first_zero {
        Some(t) => format!("density vanishes at t = {t:.6}"),
        None if !bounded => "density is unbounded".into(),
        None => format!("positive on [0, {t_max:.4}], sup {sup_density:.6}"),
    };
    conditions.push(report(1, "positive bounded density", status(first_zero.is_none() && bounded, analytic), &w, detail));

    // 2. Strong Lipschitz constant over grid points and offsets.
    let mut c: f64 = 0.0;
    let mut worst = (0.0, 0.0);
    for (&t, &pt) in grid.iter().zip(&dens) {
        for step in std::iter::once(h).chain(OFFSETS) {
            for delta in [step, -step] {
                if t + delta <= 0.0 {
                    continue;
                }
                let diff = (d.density(t + delta) - pt).abs();
                let ratio = if diff == 0.0 { 0.0 } else { diff / (pt * delta.abs()) };
                let ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
                if ratio > c {
                    c = ratio;
                    worst = (t, delta);
                }
            }
        }
    }
    conditions.push(report(
        2,
        "strong Lipschitz",
        status(c.is_finite(), analytic),
        &[("lipschitz_c", c), ("worst_t", worst.0), ("worst_dt", worst.1)],
        format!("C = {c:.6} (worst at t = {:.4}, Δ = {:.4})", worst.0, worst.1),
    ));

    // 3. Residual (2+δ)-moments.
    let k = 2.0 + opts.delta;
    let stride = (n / opts.moment_points.max(1)).max(1);
    let mut profile = Vec::new();
    let mut sup_m: f64 = 0.0;
    for &tau in grid.iter().step_by(stride) {
        if d.survival(tau) <= TAIL_EPS {
            break;
        }
        if let Ok(m) = d.residual_moment(tau, k) {
            profile.push((tau, m));
            sup_m = sup_m.max(m);
        }
    }
    let m0 = profile.first().map_or(f64::NAN, |x| x.1);
    conditions.push(report(
        3,
        "residual moment",
        status(sup_m.is_finite() && m0.is_finite(), analytic),
        &[("sup_moment", sup_m), ("m_delta", m0)],
        format!("sup over grid {sup_m:.6}, unconditional {m0:.6}"),
    ));

    // 4. Hazard and its derivative on the grid.
    let hz: Vec<(f64, f64)> = grid
        .iter()
        .filter_map(|&t| d.hazard_at(t).ok().map(|v| (t, v)))
        .collect();
    let sup_h = hz.iter().map(|x| x.1).fold(0.0, f64::max);
    let sup_dh = hz
        .windows(2)
        .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
        .fold(0.0, f64::max);
    let limits = tail_limits(d);
    let grid_ok = sup_h.is_finite() && sup_dh.is_finite() && hz.len() > 1;
    let st4 = match (grid_ok, analytic, limits) {
        (false, _, _) => Fail,
        (true, false, _) => GridOnly,
        (true, true, Some(_)) => Pass,
        (true, true, None) => Fail,
    };
    conditions.push(report(
        4,
        "bounded hazard",
        st4,
        &[("sup_hazard", sup_h), ("sup_hazard_derivative", sup_dh)],
        if analytic && limits.is_none() {
            "hazard grows without bound at the end of the support".into()
        } else {
            format!("sup h = {sup_h:.6}, sup |h'| = {sup_dh:.6}")
        },
    ));

    // 5. Tail limits.
    let (st5, w5, detail5) = match (analytic, limits) {
        (true, Some((l, dl))) => (Pass, vec![("hazard_limit", l), ("derivative_limit", dl)], "analytic tail".to_string()),
        (true, None) => (Fail, vec![], "hazard has no finite limit".to_string()),
        (false, _) => {
            let last = hz.last().map_or(f64::NAN, |x| x.1);
            (GridOnly, vec![("hazard_at_grid_end", last)], "no analytic tail for a tabulated density".to_string())
        }
    };
    conditions.push(report(5, "hazard limits", st5, &w5, detail5));

    finish(d, conditions, opts.delta, t_max, profile)
}

fn finish(
    d: &ServiceDistribution,
    conditions: Vec<ConditionReport>,
    delta: f64,
    t_max: f64,
    moment_profile: Vec<(f64, f64)>,
) -> RegularityReport {
    let overall = if conditions.iter().any(|c| c.status == ConditionStatus::Fail) {
        ConditionStatus::Fail
    } else if conditions.iter().any(|c| c.status == ConditionStatus::GridOnly) {
        ConditionStatus::GridOnly
    } else {
        ConditionStatus::Pass
    };
    RegularityReport {
        family: d.family().into(),
        conditions,
        overall,
        delta,
        t_max,
        moment_profile,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::Tabulated;

    #[test]
    fn exponential_passes_everything() {
        let r = validate_regularity(&ServiceDistribution::exponential(1.0), &RegularityOptions::default());
        assert_eq!(r.overall, ConditionStatus::Pass, "{r:#?}");
        assert_eq!(r.condition(5).witness["hazard_limit"], 1.0);
        assert_eq!(r.condition(5).witness["derivative_limit"], 0.0);
        // Worst ratio at Δ = −0.999: (e^0.999 − 1) / 0.999.
        let c = r.condition(2).witness["lipschitz_c"];
        assert!((c - (0.999f64.exp() - 1.0) / 0.999).abs() < 1e-9);
        // Γ(3.5) for the unconditional 2.5-th moment.
        assert!((r.condition(3).witness["m_delta"] - 3.323_350_970_447_843).abs() < 1e-9);
    }

    #[test]
    fn point_mass_and_uniform_fail_first_condition() {
        let r = validate_regularity(&ServiceDistribution::Deterministic { value: 1.0 }, &RegularityOptions::default());
        assert_eq!(r.condition(1).status, ConditionStatus::Fail);
        assert!(r.condition(1).detail.contains("no density"));
        assert_eq!(r.condition(1).witness["atom_t"], 1.0);

        let r = validate_regularity(&ServiceDistribution::Uniform { low: 0.0, high: 1.0 }, &RegularityOptions::default());
        let c1 = r.condition(1);
        assert_eq!(c1.status, ConditionStatus::Fail);
        let t = c1.witness["first_zero_t"];
        assert!(t > 1.0 && t < 1.001, "{t}");
    }

    #[test]
    fn gamma_two_vanishes_at_origin() {
        let r = validate_regularity(&ServiceDistribution::gamma(2.0, 1.0), &RegularityOptions::default());
        assert_eq!(r.condition(1).witness["first_zero_t"], 0.0);
        assert_eq!(r.condition(1).status, ConditionStatus::Fail);
        assert_eq!(r.condition(2).witness["lipschitz_c"], f64::INFINITY);
        for k in 3..=5 {
            assert_eq!(r.condition(k).status, ConditionStatus::Pass, "{:#?}", r.condition(k));
        }
        assert_eq!(r.condition(5).witness["hazard_limit"], 1.0);
    }

    #[test]
    fn tabulated_is_grid_only() {
        let dt = 0.01;
        let p: Vec<f64> = (0..3000).map(|k| (-(k as f64) * dt).exp()).collect();
        let d = ServiceDistribution::Tabulated(Tabulated::new(0.0, dt, p).unwrap());
        let r = validate_regularity(&d, &RegularityOptions { t_max: Some(20.0), ..Default::default() });
        assert_eq!(r.condition(1).status, ConditionStatus::GridOnly);
        assert_eq!(r.condition(5).status, ConditionStatus::GridOnly);
        assert_eq!(r.overall, ConditionStatus::GridOnly);
    }
}
