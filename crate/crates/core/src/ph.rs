//! Checks of the Poisson hypothesis on simulation output and rate traces:
//! exponential inter-arrivals, Poisson counts, independent flows, product
//! stationary marginals and forgetting of the initial state.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::des::{Probe, SimStats};
use crate::trace::{detect_flattening_over, RateTrace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhError {
    #[error("need at least {need} values, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("counts have zero mean")]
    ZeroMean,
    #[error("a count series is constant")]
    DegenerateSeries,
    #[error("trace {which} has not flattened: {detail}")]
    EitherNotConverged { which: char, detail: String },
    #[error("{0}")]
    Invalid(String),
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn median(mut x: Vec<f64>) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.sort_by(f64::total_cmp);
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

/// Variance-to-mean ratio of per-bin counts.
pub fn dispersion_index(counts: &[u64]) -> Result<f64, PhError> {
    if counts.len() < 50 {
        return Err(PhError::TooFewSamples { need: 50, got: counts.len() });
    }
    let x: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let m = mean(&x);
    if m == 0.0 {
        return Err(PhError::ZeroMean);
    }
    Ok(variance(&x, m) / m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub samples: usize,
    pub rate: f64,
    /// Whether the rate came from the same data.
    pub rate_estimated: bool,
}

/// Upper-tail points of the modified statistic
/// `(D − 0.2/n)(√n + 0.26 + 0.5/√n)` for an exponential law with fitted mean.
const LILLIEFORS_EXP: [(f64, f64); 5] = [(0.926, 0.15), (0.990, 0.10), (1.094, 0.05), (1.190, 0.025), (1.308, 0.01)];

fn lilliefors_p(d: f64, n: usize) -> f64 {
    let rn = (n as f64).sqrt();
    let x = (d - 0.2 / n as f64) * (rn + 0.26 + 0.5 / rn);
    let t = &LILLIEFORS_EXP;
    // log p is close to linear in x; extend the end segments beyond the table.
    let seg = t.windows(2).position(|w| x <= w[1].0).unwrap_or(t.len() - 2);
    let ((x0, p0), (x1, p1)) = (t[seg], t[seg + 1]);
    let lp = p0.ln() + (x - x0) / (x1 - x0) * (p1.ln() - p0.ln());
    lp.exp().clamp(1e-12, 1.0)
}

/// Asymptotic Kolmogorov tail with the small-sample shift of Stephens.
fn kolmogorov_p(d: f64, n: usize) -> f64 {
    let rn = (n as f64).sqrt();
    let x = d * (rn + 0.12 + 0.11 / rn);
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS test of exponentiality. With `rate = None` the rate is
/// fitted as `1 / mean` and the p-value uses the Lilliefors table.
pub fn ks_exponential(samples: &[f64], rate: Option<f64>) -> Result<KsResult, PhError> {
    let n = samples.len();
    if n < 100 {
        return Err(PhError::TooFewSamples { need: 100, got: n });
    }
    if samples.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(PhError::Invalid("inter-arrival times must be finite and ≥ 0".into()));
    }
    let fitted = 1.0 / mean(samples);
    let r = rate.unwrap_or(fitted);
    if !(r.is_finite() && r > 0.0) {
        return Err(PhError::Invalid(format!("rate {r} must be positive")));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = -(-r * v).exp_m1();
            ((i + 1) as f64 / nf - f).max(f - i as f64 / nf)
        })
        .fold(0.0, f64::max);
    let p_value = if rate.is_some() { kolmogorov_p(d, n) } else { lilliefors_p(d, n) };
    Ok(KsResult {
        statistic: d,
        p_value,
        samples: n,
        rate: r,
        rate_estimated: rate.is_none(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub correlation: f64,
    /// Fisher `atanh(r)·√(n − 3)`, standard normal when independent.
    pub z: f64,
    pub bins: usize,
}

/// Pearson correlation of aligned per-bin counts.
pub fn flow_independence(a: &[u64], b: &[u64]) -> Result<Correlation, PhError> {
    let n = a.len().min(b.len());
    if a.len() != b.len() {
        return Err(PhError::Invalid(format!("series lengths {} and {} differ", a.len(), b.len())));
    }
    if n < 100 {
        return Err(PhError::TooFewSamples { need: 100, got: n });
    }
    let x: Vec<f64> = a.iter().map(|&c| c as f64).collect();
    let y: Vec<f64> = b.iter().map(|&c| c as f64).collect();
    let (mx, my) = (mean(&x), mean(&y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (u, v) in x.iter().zip(&y) {
        sxy += (u - mx) * (v - my);
        sxx += (u - mx).powi(2);
        syy += (v - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(PhError::DegenerateSeries);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let z = r.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh() * ((n - 3) as f64).sqrt();
    Ok(Correlation { correlation: r, z, bins: n })
}

/// Smallest `n` with `Σ_{k≤n} p_k ≥ 1 − 1e-4`.
fn tail_cut(p: &[f64]) -> usize {
    let mut acc = 0.0;
    for (n, &x) in p.iter().enumerate() {
        acc += x;
        if acc >= 1.0 - 1e-4 {
            return n;
        }
    }
    p.len().saturating_sub(1)
}

/// Total variation `½ Σ |p − q|` with both tails beyond the larger of the
/// two `1 − 1e-4` quantiles lumped into one cell.
pub fn compare_stationary(empirical: &[f64], reference: &[f64]) -> f64 {
    let cut = tail_cut(empirical).max(tail_cut(reference));
    let at = |p: &[f64], n: usize| p.get(n).copied().unwrap_or(0.0);
    let tail = |p: &[f64]| p.iter().skip(cut + 1).sum::<f64>();
    let body: f64 = (0..=cut).map(|n| (at(empirical, n) - at(reference, n)).abs()).sum();
    (0.5 * (body + (tail(empirical) - tail(reference)).abs())).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Independence {
    /// `sup_{t > warmup} max_i |λᵃ_i − λᵇ_i|`.
    pub divergence: f64,
    /// The same, divided by the larger flattened rate of each type.
    pub relative: f64,
    pub lambda_hat_a: Vec<f64>,
    pub lambda_hat_b: Vec<f64>,
    pub pass: bool,
}

/// Compares two rate traces of one network started from different states.
/// Both must have flattened over their post-warmup second half, to `tol`
/// relative to the rate scale.
pub fn initial_state_independence(a: &RateTrace, b: &RateTrace, warmup: f64, tol: f64) -> Result<Independence, PhError> {
    if a.times != b.times || a.types() != b.types() {
        return Err(PhError::Invalid("traces must share types and sample times".into()));
    }
    let end = *a.times.last().ok_or(PhError::TooFewSamples { need: 2, got: 0 })?;
    if end <= warmup {
        return Err(PhError::Invalid(format!("trace ends at {end}, before warmup {warmup}")));
    }
    let scale = a.lambda.iter().chain(&b.lambda).flatten().fold(0.0f64, |m, &x| m.max(x)).max(1e-300);
    let window = 0.5 * (end - warmup);
    let flat = |tr: &RateTrace, which| {
        detect_flattening_over(tr, window, tol * scale).map_err(|e| PhError::EitherNotConverged {
            which,
            detail: e.to_string(),
        })
    };
    let fa = flat(a, 'a')?;
    let fb = flat(b, 'b')?;
    let start = a.index_at(warmup);
    let (mut divergence, mut relative) = (0.0f64, 0.0f64);
    for i in 0..a.types() {
        let denom = fa.lambda_hat[i].max(fb.lambda_hat[i]).max(1e-300);
        for k in start..a.len() {
            let d = (a.lambda[i][k] - b.lambda[i][k]).abs();
            divergence = divergence.max(d);
            relative = relative.max(d / denom);
        }
    }
    Ok(Independence {
        divergence,
        relative,
        pass: relative < tol,
        lambda_hat_a: fa.lambda_hat,
        lambda_hat_b: fb.lambda_hat,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhOptions {
    /// Bin width for probe count series.
    pub count_bin: f64,
    pub significance: f64,
}

impl Default for PhOptions {
    fn default() -> Self {
        Self {
            count_bin: 10.0,
            significance: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe: Probe,
    pub ks: Option<KsResult>,
    pub dispersion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub a: Probe,
    pub b: Probe,
    pub flow: Option<Correlation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhReport {
    pub servers: usize,
    pub seed: u64,
    pub probes: Vec<ProbeReport>,
    pub pairs: Vec<PairReport>,
    /// Per-type TV distance to the reference profile, when one is given.
    pub tv: Vec<f64>,
    pub divergence: Option<f64>,
    pub median_ks: f64,
    pub median_p: f64,
    pub mean_dispersion: f64,
    /// Share of probe pairs with `|z| < 3`.
    pub independent_share: f64,
}

/// Runs every check available from one simulation.
pub fn report(stats: &SimStats, reference: Option<&[Vec<f64>]>, opts: &PhOptions) -> PhReport {
    let counts: Vec<Vec<u64>> = (0..stats.probes.len()).map(|p| stats.probe_counts(p, opts.count_bin)).collect();
    let probes: Vec<ProbeReport> = stats
        .probes
        .iter()
        .enumerate()
        .map(|(p, &probe)| ProbeReport {
            probe,
            ks: ks_exponential(&stats.inter_arrivals(p), None).ok(),
            dispersion: dispersion_index(&counts[p]).ok(),
        })
        .collect();
    let mut pairs = Vec::new();
    for a in 0..counts.len() {
        for b in a + 1..counts.len() {
            pairs.push(PairReport {
                a: stats.probes[a],
                b: stats.probes[b],
                flow: flow_independence(&counts[a], &counts[b]).ok(),
            });
        }
    }
    let tv = reference
        .map(|nu| (0..stats.types).map(|i| compare_stationary(&stats.queue_marginal(i), &nu[i])).collect())
        .unwrap_or_default();
    let ks: Vec<&KsResult> = probes.iter().filter_map(|p| p.ks.as_ref()).collect();
    let disp: Vec<f64> = probes.iter().filter_map(|p| p.dispersion).collect();
    let zs: Vec<f64> = pairs.iter().filter_map(|p| p.flow.map(|f| f.z)).collect();
    PhReport {
        servers: stats.servers,
        seed: stats.seed,
        median_ks: median(ks.iter().map(|k| k.statistic).collect()),
        median_p: median(ks.iter().map(|k| k.p_value).collect()),
        mean_dispersion: if disp.is_empty() { f64::NAN } else { mean(&disp) },
        independent_share: if zs.is_empty() {
            f64::NAN
        } else {
            zs.iter().filter(|z| z.abs() < 3.0).count() as f64 / zs.len() as f64
        },
        probes,
        pairs,
        tv,
        divergence: None,
    }
}

impl PhReport {
    pub const CSV_HEADER: [&'static str; 8] =
        ["experiment", "servers", "seed", "median_ks", "median_p", "mean_dispersion", "independent_share", "max_tv"];

    /// One flat summary row for sweep aggregation.
    pub fn csv_row(&self, experiment: &str) -> [String; 8] {
        let max_tv = self.tv.iter().copied().fold(f64::NAN, f64::max);
        [
            experiment.to_string(),
            self.servers.to_string(),
            self.seed.to_string(),
            self.median_ks.to_string(),
            self.median_p.to_string(),
            self.mean_dispersion.to_string(),
            self.independent_share.to_string(),
            max_tv.to_string(),
        ]
    }

    pub fn write_summary_csv<'a>(reports: impl IntoIterator<Item = (&'a str, &'a PhReport)>, w: impl Write) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(Self::CSV_HEADER)?;
        for (name, r) in reports {
            wtr.write_record(r.csv_row(name))?;
        }
        wtr.flush()?;
        Ok(())
    }
}
