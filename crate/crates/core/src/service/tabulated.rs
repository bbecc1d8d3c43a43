use std::io::Read;

use serde::{Deserialize, Serialize};

use super::ServiceError;

/// Piecewise-linear density on a uniform grid `t0, t0 + dt, …`, zero
/// outside it. Values are renormalized to unit mass on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TabulatedRaw", into = "TabulatedRaw")]
pub struct Tabulated {
    t0: f64,
    dt: f64,
    p: Vec<f64>,
    /// `cum[k] = F(t0 + k·dt)`.
    cum: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TabulatedRaw {
    #[serde(default)]
    t0: f64,
    dt: f64,
    density: Vec<f64>,
}

impl TryFrom<TabulatedRaw> for Tabulated {
    type Error = ServiceError;

    fn try_from(raw: TabulatedRaw) -> Result<Self, ServiceError> {
        Tabulated::new(raw.t0, raw.dt, raw.density)
    }
}

impl From<Tabulated> for TabulatedRaw {
    fn from(t: Tabulated) -> Self {
        TabulatedRaw {
            t0: t.t0,
            dt: t.dt,
            density: t.p,
        }
    }
}

impl Tabulated {
    pub fn new(t0: f64, dt: f64, mut p: Vec<f64>) -> Result<Self, ServiceError> {
        let err = |s: &str| ServiceError::Table(s.to_string());
        if !(t0.is_finite() && t0 >= 0.0) {
            return Err(err("t0 must be finite and nonnegative"));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(err("dt must be finite and positive"));
        }
        if p.len() < 2 {
            return Err(err("need at least two density values"));
        }
        if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(err("density values must be finite and nonnegative"));
        }
        let mass: f64 = p.windows(2).map(|w| 0.5 * dt * (w[0] + w[1])).sum();
        if mass <= 0.0 {
            return Err(err("density has zero mass"));
        }
        p.iter_mut().for_each(|x| *x /= mass);
        let mut cum = Vec::with_capacity(p.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in p.windows(2) {
            acc += 0.5 * dt * (w[0] + w[1]);
            cum.push(acc);
        }
        Ok(Self { t0, dt, p, cum })
    }

    /// Reads `t,p` rows (optional header) on a uniform grid.
    pub fn from_csv(reader: impl Read) -> Result<Self, ServiceError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut ts = Vec::new();
        let mut ps = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| ServiceError::Table(e.to_string()))?;
            let parse = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok());
            match (parse(0), parse(1)) {
                (Some(t), Some(p)) => {
                    ts.push(t);
                    ps.push(p);
                }
                _ if line == 0 => continue,
                _ => return Err(ServiceError::Table(format!("row {} is not a (t, p) pair", line + 1))),
            }
        }
        if ts.len() < 2 {
            return Err(ServiceError::Table("need at least two rows".into()));
        }
        let dt = ts[1] - ts[0];
        for (k, w) in ts.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(ServiceError::Table(format!("grid is not uniform at row {}", k + 2)));
            }
        }
        Self::new(ts[0], dt, ps)
    }

    fn end(&self) -> f64 {
        self.t0 + self.dt * (self.p.len() - 1) as f64
    }

    fn locate(&self, t: f64) -> Option<(usize, f64)> {
        if t < self.t0 || t > self.end() {
            return None;
        }
        let x = (t - self.t0) / self.dt;
        let k = (x.floor() as usize).min(self.p.len() - 2);
        Some((k, t - self.t0 - k as f64 * self.dt))
    }

    pub fn density(&self, t: f64) -> f64 {
        match self.locate(t) {
            Some((k, s)) => self.p[k] + (self.p[k + 1] - self.p[k]) * s / self.dt,
            None => 0.0,
        }
    }

    fn cdf(&self, t: f64) -> f64 {
        if t <= self.t0 {
            return 0.0;
        }
        match self.locate(t) {
            Some((k, s)) => {
                let slope = (self.p[k + 1] - self.p[k]) / self.dt;
                (self.cum[k] + self.p[k] * s + 0.5 * slope * s * s).min(1.0)
            }
            None => 1.0,
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        (1.0 - self.cdf(t)).max(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    pub fn variance(&self) -> f64 {
        self.moment(2) - self.mean().powi(2)
    }

    /// Exact moments of the piecewise-linear density, segment by segment.
    fn moment(&self, k: i32) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.p.len() - 1 {
            let a = self.t0 + j as f64 * self.dt;
            let b = a + self.dt;
            let slope = (self.p[j + 1] - self.p[j]) / self.dt;
            let c = self.p[j] - slope * a;
            // ∫ (c + slope·t) t^k dt
            let kf = f64::from(k);
            acc += c * (b.powi(k + 1) - a.powi(k + 1)) / (kf + 1.0) + slope * (b.powi(k + 2) - a.powi(k + 2)) / (kf + 2.0);
        }
        acc
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0) * self.cum[self.cum.len() - 1];
        let k = match self.cum.partition_point(|&c| c <= u) {
            0 => 0,
            i => (i - 1).min(self.p.len() - 2),
        };
        let r = u - self.cum[k];
        let slope = (self.p[k + 1] - self.p[k]) / self.dt;
        let pk = self.p[k];
        // Solve pk·s + slope·s²/2 = r for s ∈ [0, dt].
        let s = if slope.abs() < 1e-300 {
            if pk > 0.0 {
                r / pk
            } else {
                0.0
            }
        } else {
            let disc = (pk * pk + 2.0 * slope * r).max(0.0);
            2.0 * r / (pk + disc.sqrt())
        };
        self.t0 + k as f64 * self.dt + s.clamp(0.0, self.dt)
    }
}
