//! Rate traces `λ_i(t)`, `b_i(t)` and flattening detection.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace has {len} samples, need more than {need}")]
    TooShort { len: usize, need: usize },
    #[error("rates have not flattened: λ oscillation {lambda:?}, b oscillation {b:?}, queue drift {queue:?}")]
    NotConverged { lambda: Vec<f64>, b: Vec<f64>, queue: Vec<f64> },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed trace csv: {0}")]
    Format(String),
}

/// Per-type time series sampled at common times. `lambda[i][k]` is the
/// input rate of type `i` at `times[k]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateTrace {
    pub times: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// Mean queue length per type; empty when not tracked.
    pub mean_customers: Vec<Vec<f64>>,
}

impl RateTrace {
    pub fn new(m: usize, track_queues: bool) -> Self {
        Self {
            times: Vec::new(),
            lambda: vec![Vec::new(); m],
            b: vec![Vec::new(); m],
            mean_customers: if track_queues { vec![Vec::new(); m] } else { Vec::new() },
        }
    }

    pub fn types(&self) -> usize {
        self.lambda.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, t: f64, lambda: &[f64], b: &[f64], queues: Option<&[f64]>) {
        self.times.push(t);
        for (i, (l, bb)) in lambda.iter().zip(b).enumerate() {
            self.lambda[i].push(*l);
            self.b[i].push(*bb);
        }
        if let Some(q) = queues {
            for (series, v) in self.mean_customers.iter_mut().zip(q) {
                series.push(*v);
            }
        }
    }

    /// Index of the first sample with `t ≥ t0`.
    pub fn index_at(&self, t0: f64) -> usize {
        self.times.partition_point(|&t| t < t0)
    }

    /// Writes rows `t,type,lambda,b` with 1-based types.
    pub fn write_csv(&self, w: impl Write) -> Result<(), TraceError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "type", "lambda", "b"])?;
        for (k, t) in self.times.iter().enumerate() {
            for i in 0..self.types() {
                wtr.write_record([
                    t.to_string(),
                    (i + 1).to_string(),
                    self.lambda[i][k].to_string(),
                    self.b[i][k].to_string(),
                ])?;
            }
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv(r: impl Read) -> Result<Self, TraceError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows: Vec<(f64, usize, f64, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64, TraceError> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| TraceError::Format(format!("bad field {i} in {rec:?}")))
            };
            let ty = f(1)? as usize;
            if ty == 0 {
                return Err(TraceError::Format("types are 1-based".into()));
            }
            rows.push((f(0)?, ty - 1, f(2)?, f(3)?));
        }
        let m = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let mut trace = RateTrace::new(m, false);
        for chunk in rows.chunks(m.max(1)) {
            if chunk.len() != m || chunk.iter().enumerate().any(|(i, r)| r.1 != i || r.0 != chunk[0].0) {
                return Err(TraceError::Format("rows must list every type once per time".into()));
            }
            let l: Vec<f64> = chunk.iter().map(|r| r.2).collect();
            let b: Vec<f64> = chunk.iter().map(|r| r.3).collect();
            trace.push(chunk[0].0, &l, &b, None);
        }
        Ok(trace)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flattening {
    pub lambda_hat: Vec<f64>,
    pub b_hat: Vec<f64>,
    /// Trailing-window `max − min` of λ and b per type.
    pub oscillation_lambda: Vec<f64>,
    pub oscillation_b: Vec<f64>,
    /// Start of the trailing window.
    pub converged_at: f64,
}

fn spread(xs: &[f64]) -> f64 {
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if xs.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Converged when the trailing `window` (in samples) has λ and b spreads
/// below `tol` for every type and, when queue means are tracked, their
/// relative spread is below `tol` as well (rates of an overloaded node can
/// be flat while its queue grows).
pub fn detect_flattening(trace: &RateTrace, window: usize, tol: f64) -> Result<Flattening, TraceError> {
    let n = trace.len();
    if window == 0 || n <= 2 * window {
        return Err(TraceError::TooShort { len: n, need: 2 * window });
    }
    let tail = n - window..n;
    let osc_l: Vec<f64> = trace.lambda.iter().map(|s| spread(&s[tail.clone()])).collect();
    let osc_b: Vec<f64> = trace.b.iter().map(|s| spread(&s[tail.clone()])).collect();
    let osc_q: Vec<f64> = trace
        .mean_customers
        .iter()
        .map(|s| spread(&s[tail.clone()]) / mean(&s[tail.clone()]).max(1.0))
        .collect();
    let ok = osc_l.iter().chain(&osc_b).chain(&osc_q).all(|&x| x < tol);
    if !ok {
        return Err(TraceError::NotConverged {
            lambda: osc_l,
            b: osc_b,
            queue: osc_q,
        });
    }
    Ok(Flattening {
        lambda_hat: trace.lambda.iter().map(|s| mean(&s[tail.clone()])).collect(),
        b_hat: trace.b.iter().map(|s| mean(&s[tail.clone()])).collect(),
        oscillation_lambda: osc_l,
        oscillation_b: osc_b,
        converged_at: trace.times[n - window],
    })
}

/// Like [`detect_flattening`] with the window given in time units.
pub fn detect_flattening_over(trace: &RateTrace, window_time: f64, tol: f64) -> Result<Flattening, TraceError> {
    let n = trace.len();
    if n < 2 {
        return Err(TraceError::TooShort { len: n, need: 2 });
    }
    let start = trace.times[n - 1] - window_time;
    let window = n - trace.index_at(start);
    detect_flattening(trace, window, tol)
}
