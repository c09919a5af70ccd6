//! Windowed statistics, KDE squeezing estimates, efficiency inversion and the
//! least-squares model fits.

mod fit;
mod kde;

pub use fit::{
    fit_proportional_eta, fit_pump_sweep, least_squares, FitOptions, FitResult, ProfilePoint, PumpPoint,
};
pub use kde::{edge_locations, kde_squeezing_estimate, GaussianKde, SqueezingEstimate, KDE_GRID_POINTS};

use rayon::prelude::*;

use crate::error::{QpaError, Result};
use crate::receiver::MeasurementRecord;

/// Per-window sample means and unbiased variances of a record.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSeries {
    pub window_size: usize,
    pub variances: Vec<f64>,
    pub means: Vec<f64>,
    /// Window center times in seconds.
    pub timestamps: Vec<f64>,
}

impl VarianceSeries {
    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    pub fn mean_variance(&self) -> f64 {
        self.variances.iter().sum::<f64>() / self.variances.len() as f64
    }

    /// Sample standard deviation of the window variances.
    pub fn variance_spread(&self) -> f64 {
        let n = self.variances.len() as f64;
        let m = self.mean_variance();
        (self.variances.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }
}

/// Splits `record` into non-overlapping windows (trailing partial window
/// dropped) and returns each window's mean and unbiased variance.
pub fn window_stats(record: &MeasurementRecord, window_size: usize) -> Result<VarianceSeries> {
    if window_size < 2 {
        return Err(QpaError::domain("window size must be at least 2"));
    }
    if record.len() < window_size {
        return Err(QpaError::domain(format!(
            "record of {} samples is shorter than one window of {window_size}",
            record.len()
        )));
    }
    let stats: Vec<(f64, f64)> = record
        .samples
        .par_chunks_exact(window_size)
        .map(moments)
        .collect();
    Ok(series(window_size, record.sampling_rate, stats))
}

fn moments(w: &[f64]) -> (f64, f64) {
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn series(window_size: usize, sampling_rate: f64, stats: Vec<(f64, f64)>) -> VarianceSeries {
    let timestamps = (0..stats.len())
        .map(|k| (k as f64 + 0.5) * window_size as f64 / sampling_rate)
        .collect();
    VarianceSeries {
        window_size,
        means: stats.iter().map(|s| s.0).collect(),
        variances: stats.iter().map(|s| s.1).collect(),
        timestamps,
    }
}

/// Streaming counterpart of [`window_stats`]; gives identical results for
/// the same samples however they are chunked.
#[derive(Debug, Clone)]
pub struct WindowAccumulator {
    window_size: usize,
    sampling_rate: f64,
    buffer: Vec<f64>,
    stats: Vec<(f64, f64)>,
}

impl WindowAccumulator {
    pub fn new(window_size: usize, sampling_rate: f64) -> Result<Self> {
        if window_size < 2 {
            return Err(QpaError::domain("window size must be at least 2"));
        }
        Ok(Self { window_size, sampling_rate, buffer: Vec::with_capacity(window_size), stats: Vec::new() })
    }

    pub fn push(&mut self, mut samples: &[f64]) {
        while !samples.is_empty() {
            let take = (self.window_size - self.buffer.len()).min(samples.len());
            self.buffer.extend_from_slice(&samples[..take]);
            samples = &samples[take..];
            if self.buffer.len() == self.window_size {
                self.stats.push(moments(&self.buffer));
                self.buffer.clear();
            }
        }
    }

    pub fn finish(self) -> Result<VarianceSeries> {
        if self.stats.is_empty() {
            return Err(QpaError::domain(format!("fewer samples than one window of {}", self.window_size)));
        }
        Ok(series(self.window_size, self.sampling_rate, self.stats))
    }
}

/// Shot-normalized quadrature variance `η e^{±2r} + 1 − η`; `sign` is +1 for
/// antisqueezing and −1 for squeezing.
pub fn model_variance(r: f64, eta: f64, sign: f64) -> f64 {
    eta * (sign.signum() * 2.0 * r).exp() + 1.0 - eta
}

pub fn model_variance_db(r: f64, eta: f64, sign: f64) -> f64 {
    10.0 * model_variance(r, eta, sign).log10()
}

/// Efficiency from the antisqueezing/squeezing ratio `A = ΔX₊²/ΔX₋²`.
pub fn eta_from_ratio(a: f64, r: f64) -> Result<f64> {
    if !(a >= 1.0) {
        return Err(QpaError::domain(format!("variance ratio {a} < 1 is unphysical")));
    }
    if !(r > 0.0) {
        return Err(QpaError::domain("squeezing parameter must be positive"));
    }
    let e = (2.0 * r).exp();
    Ok((a - 1.0) * e / ((e - 1.0) * (a + e)))
}

/// Normalizes per-channel efficiencies to unit sum.
pub fn pixel_geometric_efficiencies(channel_etas: &[f64]) -> Result<Vec<f64>> {
    if channel_etas.iter().any(|e| !(*e >= 0.0)) {
        return Err(QpaError::domain("channel efficiencies must be >= 0"));
    }
    let total: f64 = channel_etas.iter().sum();
    if !(total > 0.0) {
        return Err(QpaError::domain("need at least one positive channel efficiency"));
    }
    Ok(channel_etas.iter().map(|e| e / total).collect())
}

/// Total of a list of named losses in dB.
pub fn loss_budget(components: &[(&str, f64)]) -> Result<f64> {
    if let Some((name, db)) = components.iter().find(|(_, db)| !(*db >= 0.0)) {
        return Err(QpaError::domain(format!("loss '{name}' is negative ({db} dB)")));
    }
    Ok(components.iter().map(|(_, db)| db).sum())
}

/// Residual loss after removing known contributions from a measured total.
pub fn de_embed(total_db: f64, known_db: &[f64]) -> Result<f64> {
    if !(total_db >= 0.0) || known_db.iter().any(|k| !(*k >= 0.0)) {
        return Err(QpaError::domain("losses must be >= 0 dB"));
    }
    Ok(total_db - known_db.iter().sum::<f64>())
}
