use serde::{Deserialize, Serialize};

use super::grid::ServiceGrid;
use super::NlmpError;

/// Top rows lighter than this are folded into `dust`.
pub const DUST: f64 = 1e-18;

/// Probability measure over queue states `0` and `(n, τ)` for one type.
/// Row `r` holds the `τ`-cells of `n = r + 1` customers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMeasure {
    pub p_empty: f64,
    rows: Vec<Vec<f64>>,
    row_mass: Vec<f64>,
    /// Mass that would have needed more than `n_max` rows.
    pub overflow: f64,
    /// Negligible top-row mass dropped by trimming.
    pub dust: f64,
    cells: usize,
    /// Per-row `Σ μ q` for the step `done_dt`, kept by the stepper.
    #[serde(skip)]
    done: Vec<f64>,
    #[serde(skip)]
    done_dt: f64,
}

impl NodeMeasure {
    pub fn empty(cells: usize) -> Self {
        Self {
            p_empty: 1.0,
            rows: Vec::new(),
            row_mass: Vec::new(),
            overflow: 0.0,
            dust: 0.0,
            cells,
            done: Vec::new(),
            done_dt: 0.0,
        }
    }

    /// All mass at `n` customers, the one in service at cell `cell`.
    pub fn point(cells: usize, n: usize, cell: usize) -> Self {
        let mut m = Self::empty(cells);
        if n > 0 {
            m.p_empty = 0.0;
            m.rows = vec![vec![0.0; cells]; n];
            m.rows[n - 1][cell.min(cells - 1)] = 1.0;
            m.row_mass = vec![0.0; n];
            m.row_mass[n - 1] = 1.0;
        }
        m
    }

    /// Queue-length law `probs[n]` with every service just started.
    pub fn from_queue_law(cells: usize, probs: &[f64]) -> Result<Self, NlmpError> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(NlmpError::InitialState("queue law must be a probability vector".into()));
        }
        let mut m = Self::empty(cells);
        m.p_empty = probs[0];
        for &p in &probs[1..] {
            let mut row = vec![0.0; cells];
            row[0] = p;
            m.rows.push(row);
            m.row_mass.push(p);
        }
        Ok(m)
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Mass at `n ≥ 1` customers and cell `k`.
    pub fn mass(&self, n: usize, k: usize) -> f64 {
        self.rows.get(n.wrapping_sub(1)).map_or(0.0, |r| r[k])
    }

    pub fn row_masses(&self) -> &[f64] {
        &self.row_mass
    }

    pub fn total_mass(&self) -> f64 {
        self.p_empty + self.row_mass.iter().sum::<f64>() + self.overflow + self.dust
    }

    /// `[P(0), P(1), …]` over tracked rows.
    pub fn queue_law(&self) -> Vec<f64> {
        std::iter::once(self.p_empty).chain(self.row_mass.iter().copied()).collect()
    }

    /// Mean queue length from cached row masses.
    pub fn mean_len(&self) -> f64 {
        self.row_mass.iter().enumerate().map(|(r, m)| (r + 1) as f64 * m).sum()
    }

    fn refresh_masses(&mut self) {
        self.row_mass = self.rows.iter().map(|r| r.iter().sum()).collect();
    }

    /// Multiplies every mass by `s`.
    pub(crate) fn scale(&mut self, s: f64) {
        self.p_empty *= s;
        self.overflow *= s;
        self.dust *= s;
        for r in &mut self.rows {
            r.iter_mut().for_each(|x| *x *= s);
        }
        self.done.iter_mut().for_each(|x| *x *= s);
        self.refresh_masses();
    }

    /// Output rate `Σ μ(n, k) q_k / Δt`.
    pub fn output_rate(&self, q: &[f64], dt: f64) -> f64 {
        self.rows
            .iter()
            .map(|r| r.iter().zip(q).map(|(m, q)| m * q).sum::<f64>())
            .sum::<f64>()
            / dt
    }
}

/// Advances one [`NodeMeasure`] by `Δt` with the splitting
/// complete → arrive → age.
#[derive(Debug, Clone)]
pub struct NodeStepper {
    q: Vec<f64>,
    keep: Vec<f64>,
    dt: f64,
    /// Fraction of a cell aged per step, `Δt / Δτ`.
    f: f64,
    n_max: usize,
    pool: Vec<Vec<f64>>,
    done: Vec<f64>,
    left: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Mass that completed service during the step (`b Δt`).
    pub completed: f64,
    /// Output rate of the updated measure.
    pub next_b: f64,
}

/// `Σ x_k q_k` with independent lanes so the loop vectorizes.
fn dot(x: &[f64], q: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let xc = x.chunks_exact(4);
    let qc = q.chunks_exact(4);
    let (xr, qr) = (xc.remainder(), qc.remainder());
    for (a, b) in xc.zip(qc) {
        for l in 0..4 {
            acc[l] += a[l] * b[l];
        }
    }
    let tail: f64 = xr.iter().zip(qr).map(|(a, b)| a * b).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl NodeStepper {
    pub fn new(grid: &ServiceGrid, dt: f64, n_max: usize) -> Result<Self, NlmpError> {
        let f = dt / grid.dtau();
        if !(dt > 0.0 && f <= 1.0 + 1e-12) {
            return Err(NlmpError::StepTooLarge(format!("Δt = {dt} exceeds Δτ = {}", grid.dtau())));
        }
        let q = grid.completion_probs(dt);
        Ok(Self {
            keep: q.iter().map(|q| 1.0 - q).collect(),
            q,
            dt,
            // Within rounding of a full cell counts as a full cell.
            f: if f > 1.0 - 1e-12 { 1.0 } else { f },
            n_max: n_max.max(1),
            pool: Vec::new(),
            done: Vec::new(),
            left: Vec::new(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// One step with arrival probability `a = λΔt`. Rows are updated in
    /// place from the top down, so row `r − 1` is still pre-step when row
    /// `r` draws its arrivals from it.
    pub fn step(&mut self, mu: &mut NodeMeasure, a: f64) -> StepOutcome {
        let cells = self.q.len();
        debug_assert_eq!(cells, mu.cells);
        let (f, g, stay) = (self.f, 1.0 - self.f, 1.0 - a);
        let n_rows = mu.rows.len();
        assert!(n_rows <= self.n_max, "measure has {n_rows} rows, cap is {}", self.n_max);
        let grows = a > 0.0 && (n_rows > 0 || mu.p_empty > 0.0);
        let capped = grows && n_rows == self.n_max;
        let kept = if grows && !capped { n_rows + 1 } else { n_rows };

        // Per-row completed mass `Σ μ q`, carried over from the previous step.
        if mu.done_dt != self.dt || mu.done.len() != n_rows {
            mu.done = mu.rows.iter().map(|r| dot(r, &self.q)).collect();
            mu.done_dt = self.dt;
        }
        self.done.clear();
        self.done.extend_from_slice(&mu.done);
        self.done.resize(kept, 0.0);
        while mu.rows.len() < kept {
            let mut row = self.pool.pop().unwrap_or_default();
            row.clear();
            row.resize(cells, 0.0);
            mu.rows.push(row);
        }
        mu.row_mass.resize(kept, 0.0);
        mu.done.resize(kept, 0.0);

        // Post-completion row masses `M_r − C_r`; aging preserves mass.
        self.left.clear();
        self.left.extend(mu.row_mass.iter().zip(&self.done).map(|(m, c)| m - c));

        let (keep, q) = (&self.keep[..], &self.q[..]);
        for r in (0..kept).rev() {
            let (lower, upper) = mu.rows.split_at_mut(r);
            let row = &mut upper[0][..];
            // Complete, then arrive: (1 − a)·c_r + a·c_{r−1}.
            if let Some(below) = lower.last() {
                for ((x, &b), &k) in row.iter_mut().zip(below).zip(keep) {
                    *x = k * (stay * *x + a * b);
                }
            } else {
                for (x, &k) in row.iter_mut().zip(keep) {
                    *x *= k * stay;
                }
            }
            // Age by a fraction `f` of a cell; the last cell keeps its mass.
            let last = row[cells - 1];
            if g == 0.0 {
                let spill = row[cells - 2];
                row.copy_within(0..cells - 1, 1);
                row[0] = 0.0;
                row[cells - 1] = last + spill;
            } else {
                for k in (1..cells).rev() {
                    row[k] = g * row[k] + f * row[k - 1];
                }
                row[0] *= g;
                row[cells - 1] += f * last;
            }
            let below_left = if r > 0 { self.left[r - 1] } else { 0.0 };
            mu.row_mass[r] = stay * self.left[r] + a * below_left;
            mu.done[r] = dot(row, q);
        }
        // Arrivals out of the top row would need row `n_max + 1`.
        let overflow_in = if capped { a * self.left[kept - 1] } else { 0.0 };

        // Completions re-enter at cell 0 of the row below, then see arrivals.
        let completed_total: f64 = self.done.iter().sum();
        let done = &self.done;
        let z = |s: usize| {
            if s == 0 {
                mu.p_empty + done.first().copied().unwrap_or(0.0)
            } else {
                done.get(s).copied().unwrap_or(0.0)
            }
        };
        let z0 = z(0);
        let entry = g * q[0] + f * q[1];
        for r in 0..kept {
            let extra = stay * z(r + 1) + a * z(r);
            if extra != 0.0 {
                let row = &mut mu.rows[r];
                row[0] += g * extra;
                row[1] += f * extra;
                mu.row_mass[r] += extra;
                mu.done[r] += extra * entry;
            }
        }
        mu.p_empty = stay * z0;
        mu.overflow += overflow_in;

        while let Some(&m) = mu.row_mass.last() {
            if m >= DUST {
                break;
            }
            mu.dust += m;
            mu.row_mass.pop();
            mu.done.pop();
            if let Some(r) = mu.rows.pop() {
                self.pool.push(r);
            }
        }
        StepOutcome {
            completed: completed_total,
            next_b: mu.done.iter().sum::<f64>() / self.dt,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::ServiceDistribution;

    fn exp_grid() -> ServiceGrid {
        ServiceGrid::new(&ServiceDistribution::exponential(1.0), 0.01, 1e-8).unwrap()
    }

    #[test]
    fn empty_without_arrivals_is_fixed() {
        let g = exp_grid();
        let mut st = NodeStepper::new(&g, 0.01, 200).unwrap();
        let mut mu = NodeMeasure::empty(g.cells());
        let out = st.step(&mut mu, 0.0);
        assert_eq!(out.completed, 0.0);
        assert_eq!(out.next_b, 0.0);
        assert_eq!(mu.p_empty, 1.0);
        assert!(mu.rows().is_empty());
    }

    #[test]
    fn single_customer_completes_at_unit_rate() {
        let g = exp_grid();
        let dt = 0.01;
        let mut st = NodeStepper::new(&g, dt, 200).unwrap();
        let mut mu = NodeMeasure::point(g.cells(), 1, 30);
        assert!((mu.output_rate(st.q(), dt) - 1.0).abs() < 1e-9);
        let out = st.step(&mut mu, 0.0);
        assert!((out.completed / dt - 1.0).abs() < 1e-9);
        assert!((mu.p_empty - dt).abs() < 1e-11);
        assert!((mu.mass(1, 31) - (1.0 - dt)).abs() < 1e-11);
        assert!((out.next_b - (1.0 - dt)).abs() < 1e-9);
    }

    #[test]
    fn mass_and_mean_balance_per_step() {
        let d = ServiceDistribution::gamma(2.0, 0.5);
        let g = ServiceGrid::new(&d, 0.02, 1e-8).unwrap();
        let dt = 0.01;
        let mut st = NodeStepper::new(&g, dt, 200).unwrap();
        let mut mu = NodeMeasure::point(g.cells(), 3, 5);
        let a = 0.6 * dt;
        for _ in 0..500 {
            let before = mu.mean_len();
            let out = st.step(&mut mu, a);
            assert!((mu.total_mass() - 1.0).abs() < 1e-12);
            // Every step adds `a` customers in mean and removes the completions.
            let expect = before + a - out.completed;
            assert!((mu.mean_len() - expect).abs() < 1e-12, "{} vs {expect}", mu.mean_len());
        }
        let direct = mu.output_rate(st.q(), dt);
        let out = st.step(&mut mu.clone(), a);
        assert!((out.completed / dt - direct).abs() < 1e-12);
    }

    #[test]
    fn cap_sends_mass_to_overflow() {
        let g = exp_grid();
        let mut st = NodeStepper::new(&g, 0.01, 3).unwrap();
        let mut mu = NodeMeasure::point(g.cells(), 3, 0);
        st.step(&mut mu, 0.5);
        assert!(mu.rows().len() <= 3);
        assert!(mu.overflow > 0.4);
        assert!((mu.total_mass() - 1.0).abs() < 1e-14);
    }
}
