//! Parameter estimation from a series of periodic closing prices.
//!
//! The estimator treats the sign of each log-increment as a noisy regime
//! indicator. Counting sign changes then estimates switching: a down-to-up
//! change marks the chain leaving the down regime, so with `R1` and `R2` the
//! two change counts and `R` the ratio of up days to down days (which splits
//! the span `T` into occupation times `T1 = T*R/(1+R)` and `T2 = T/(1+R)`),
//! the rates are `lambda1_hat = (R1 + R2/R)/T` and
//! `lambda2_hat = (R*R1 + R2)/T`. Growth magnitudes come from the increment
//! dispersion `sigma0`, split between the regimes in inverse proportion to
//! occupation (`nu1_hat*sigma1 = nu2_hat*sigma2`), and are centered on the
//! long-run drift `mu_hat = log(last/first)/T`.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{phi, ModelParams};
use crate::simulator::ChainPath;

/// A series of strictly positive closes sampled `delta` time units apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    /// One label (typically a date) per close.
    pub labels: Vec<String>,
    pub closes: Vec<f64>,
    /// Sampling interval in the model's time unit (e.g. `1/252` years for
    /// daily closes in annual units).
    pub delta: f64,
}

impl PriceSeries {
    pub fn new(labels: Vec<String>, closes: Vec<f64>, delta: f64) -> Result<Self> {
        if closes.len() < 2 {
            return Err(Error::SeriesTooShort {
                len: closes.len(),
                min: 2,
            });
        }
        if labels.len() != closes.len() {
            return Err(Error::MalformedParameter {
                name: "labels",
                value: labels.len() as f64,
                reason: "must have one label per close",
            });
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::MalformedParameter {
                name: "delta",
                value: delta,
                reason: "must be a positive finite interval",
            });
        }
        for (index, &value) in closes.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::BadPrice { index, value });
            }
        }
        Ok(PriceSeries { labels, closes, delta })
    }

    /// Reads a `date,close` CSV (header required, extra columns ignored).
    pub fn from_csv<R: Read>(reader: R, delta: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &'static str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or(Error::CsvField {
                    row: 0,
                    field: name,
                    value: "column not found in header".to_string(),
                })
        };
        let date_col = find("date")?;
        let close_col = find("close")?;
        let mut labels = Vec::new();
        let mut closes = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let row = i + 2; // 1-based, after the header line
            let date = record.get(date_col).unwrap_or("").to_string();
            let raw = record.get(close_col).unwrap_or("");
            let close: f64 = raw.parse().map_err(|_| Error::CsvField {
                row,
                field: "close",
                value: raw.to_string(),
            })?;
            labels.push(date);
            closes.push(close);
        }
        PriceSeries::new(labels, closes, delta)
    }

    pub fn from_path<P: AsRef<Path>>(path: P, delta: f64) -> Result<Self> {
        PriceSeries::from_csv(std::fs::File::open(path)?, delta)
    }

    /// Samples a simulated path every `delta` time units (horizon included
    /// when it falls on the grid), labelling closes by sample index.
    pub fn sample_path(path: &ChainPath, params: &ModelParams, delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::MalformedParameter {
                name: "delta",
                value: delta,
                reason: "must be a positive finite interval",
            });
        }
        let mut labels = Vec::new();
        let mut closes = Vec::new();
        for k in 0usize.. {
            let raw = k as f64 * delta;
            // k*delta can overshoot the horizon by rounding; snap it back.
            if raw > path.horizon + delta * 1e-6 {
                break;
            }
            let t = raw.min(path.horizon);
            closes.push(path.price_at(params, t)?);
            labels.push(k.to_string());
        }
        PriceSeries::new(labels, closes, delta)
    }

    /// Time covered by the series.
    pub fn span(&self) -> f64 {
        (self.closes.len() - 1) as f64 * self.delta
    }

    /// `log(close[k+1] / close[k])` for consecutive closes.
    pub fn log_increments(&self) -> Vec<f64> {
        self.closes.windows(2).map(|w| (w[1] / w[0]).ln()).collect()
    }

    /// A copy of `len` consecutive closes starting at `start`, or `None` if
    /// the range leaves the series.
    pub fn window(&self, start: usize, len: usize) -> Option<PriceSeries> {
        let end = start.checked_add(len)?;
        if end > self.closes.len() || len < 2 {
            return None;
        }
        Some(PriceSeries {
            labels: self.labels[start..end].to_vec(),
            closes: self.closes[start..end].to_vec(),
            delta: self.delta,
        })
    }
}

/// Everything the estimator measures. `R`, `R1`, `R2` keep their counting
/// nature (`R1`/`R2` are integers; `R` is the up/down day ratio).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub mu_hat: f64,
    /// Sample standard deviation of the raw log-increments.
    pub sigma0: f64,
    /// Up days divided by down days (zero increments dropped).
    #[serde(rename = "R")]
    pub r: f64,
    /// Down-to-up sign changes.
    #[serde(rename = "R1")]
    pub r1: u64,
    /// Up-to-down sign changes.
    #[serde(rename = "R2")]
    pub r2: u64,
    pub lambda1_hat: f64,
    pub lambda2_hat: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub f1_hat: f64,
    pub f2_hat: f64,
    /// `phi` evaluated at the supplied discount rate on the estimates.
    pub phi_rho: f64,
}

impl CalibrationResult {
    /// The estimates packaged as model parameters for a given cost.
    pub fn to_params(&self, rho: f64, k: f64) -> ModelParams {
        ModelParams {
            f1: self.f1_hat,
            f2: self.f2_hat,
            lambda1: self.lambda1_hat,
            lambda2: self.lambda2_hat,
            rho,
            k,
        }
    }
}

/// Runs the sign-change estimator over `series`; `rho` is only used to
/// report `phi_rho` on the resulting estimates.
///
/// Needs at least 3 closes, at least one increment of each sign, and at
/// least one sign change in each direction — anything less leaves a divisor
/// empty and returns [`Error::DegenerateSeries`] naming the missing feature.
pub fn calibrate(series: &PriceSeries, rho: f64) -> Result<CalibrationResult> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::MalformedParameter {
            name: "rho",
            value: rho,
            reason: "must be a positive finite rate",
        });
    }
    let n_closes = series.closes.len();
    if n_closes < 3 {
        return Err(Error::SeriesTooShort { len: n_closes, min: 3 });
    }
    let dz = series.log_increments();
    let t_span = series.span();
    let mu_hat = (series.closes[n_closes - 1] / series.closes[0]).ln() / t_span;

    let n = dz.len() as f64;
    let z_bar = dz.iter().sum::<f64>() / n;
    let ss: f64 = dz.iter().map(|z| (z - z_bar) * (z - z_bar)).sum();
    let sigma0 = (ss / (n - 1.0)).sqrt();

    // Zero increments carry no sign information; drop them from the regime
    // indicator sequence (they still count toward the span and sigma0).
    let signs: Vec<bool> = dz.iter().filter(|z| **z != 0.0).map(|z| *z > 0.0).collect();
    let n_pos = signs.iter().filter(|s| **s).count();
    let n_neg = signs.len() - n_pos;
    if n_pos == 0 {
        return Err(Error::DegenerateSeries { missing: "up days" });
    }
    if n_neg == 0 {
        return Err(Error::DegenerateSeries { missing: "down days" });
    }
    let r = n_pos as f64 / n_neg as f64;
    let r1 = signs.windows(2).filter(|w| !w[0] && w[1]).count() as u64;
    let r2 = signs.windows(2).filter(|w| w[0] && !w[1]).count() as u64;
    if r1 == 0 {
        return Err(Error::DegenerateSeries { missing: "down-to-up sign changes" });
    }
    if r2 == 0 {
        return Err(Error::DegenerateSeries { missing: "up-to-down sign changes" });
    }

    let lambda1_hat = (r1 as f64 + r2 as f64 / r) / t_span;
    let lambda2_hat = (r * r1 as f64 + r2 as f64) / t_span;
    let lam_sum = lambda1_hat + lambda2_hat;
    let sigma1 = sigma0 / series.delta.sqrt() * (lambda1_hat * lam_sum / (2.0 * lambda2_hat)).sqrt();
    let sigma2 = sigma0 / series.delta.sqrt() * (lambda2_hat * lam_sum / (2.0 * lambda1_hat)).sqrt();
    let f1_hat = mu_hat + sigma1;
    let f2_hat = mu_hat - sigma2;

    Ok(CalibrationResult {
        mu_hat,
        sigma0,
        r,
        r1,
        r2,
        lambda1_hat,
        lambda2_hat,
        sigma1,
        sigma2,
        f1_hat,
        f2_hat,
        phi_rho: phi(f1_hat, f2_hat, lambda1_hat, lambda2_hat, rho),
    })
}
