//! Two-mode cluster-state emulation: half-array RF combining, a digital
//! beamsplitter on the combined quadratures and the inseparability measure.
//!
//! With `S = (1/√2)[[1, i], [i, 1]]` and `P(θ) = X(θ + π/2)` the output
//! quadratures are `X₃ = (X₁ + P₂)/√2`, `P₃ = (P₁ − X₂)/√2`,
//! `X₄ = (P₁ + X₂)/√2`, `P₄ = (P₂ − X₁)/√2`, so `P₄ − X₃ = −√2 X₁` and
//! `P₃ − X₄ = −√2 X₂`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

use crate::error::{QpaError, Result};
use crate::experiments::output::CsvTable;
use crate::gaussian::{self, GaussianState, SIGMA_VAC};
use crate::receiver::{self, ChannelSettings, MeasurementRecord, PhaseRamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterPipelineConfig {
    /// Array channels feeding the pixel modes, in combiner input order.
    pub pixel_channels: Vec<usize>,
    /// Rows of the 0/1 combiner gain matrix over the pixel modes.
    pub combiner_map: Vec<Vec<f64>>,
    pub digitizer_rate: f64,
    /// Keep every `decimation`-th digitized sample.
    pub decimation: usize,
    pub ramp_frequency_hz: f64,
    pub duration_s: f64,
    /// Samples per LO segment; segments alternate between θ and θ + π/2.
    pub segment_len: usize,
    /// Samples per inseparability window.
    pub window_size: usize,
    pub bootstrap_blocks: usize,
    pub bootstrap_resamples: usize,
}

impl Default for ClusterPipelineConfig {
    fn default() -> Self {
        Self {
            pixel_channels: (12..20).collect(),
            combiner_map: vec![
                vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
            ],
            digitizer_rate: 1e8,
            decimation: 20,
            ramp_frequency_hz: 0.5,
            duration_s: 2.0,
            segment_len: 1000,
            window_size: 100_000,
            bootstrap_blocks: 20,
            bootstrap_resamples: 200,
        }
    }
}

impl ClusterPipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.pixel_channels.len();
        if n == 0 {
            return Err(QpaError::domain("need at least one pixel"));
        }
        if self.combiner_map.len() != 2 || self.combiner_map.iter().any(|row| row.len() != n) {
            return Err(QpaError::domain(format!("combiner map must be 2 x {n}")));
        }
        if self.combiner_map.iter().flatten().any(|g| *g != 0.0 && *g != 1.0) {
            return Err(QpaError::domain("combiner gains must be 0 or 1"));
        }
        if (0..n).any(|j| self.combiner_map[0][j] != 0.0 && self.combiner_map[1][j] != 0.0) {
            return Err(QpaError::domain("combiner rows must be disjoint"));
        }
        if self.combiner_map.iter().any(|row| row.iter().all(|g| *g == 0.0)) {
            return Err(QpaError::domain("each combiner row needs an active pixel"));
        }
        if !(self.digitizer_rate > 0.0) || self.decimation == 0 {
            return Err(QpaError::domain("digitizer rate and decimation must be positive"));
        }
        if self.segment_len == 0 || self.window_size < 2 * self.segment_len {
            return Err(QpaError::domain("window must hold at least one θ/θ+π/2 segment pair"));
        }
        if self.bootstrap_blocks < 2 || self.bootstrap_resamples < 2 {
            return Err(QpaError::domain("bootstrap needs at least two blocks and two resamples"));
        }
        self.ramp().validate()
    }

    /// LO ramp at the decimated sampling rate.
    pub fn ramp(&self) -> PhaseRamp {
        PhaseRamp {
            frequency_hz: self.ramp_frequency_hz,
            duration_s: self.duration_s,
            sampling_rate: self.digitizer_rate / self.decimation as f64,
        }
    }

    /// Combiner rows as channel settings over the pixel modes.
    pub fn row_settings(&self, phases: &[f64]) -> Result<[ChannelSettings; 2]> {
        let a = ChannelSettings::new(self.combiner_map[0].clone(), phases.to_vec())?;
        let b = ChannelSettings::new(self.combiner_map[1].clone(), phases.to_vec())?;
        Ok([a, b])
    }
}

/// `G ⊕ G` combining of pixel modes into two modes, each row renormalized
/// so vacuum stays vacuum. `phases` are the per-pixel LO phases.
pub fn power_combine_halves(
    pixels: &GaussianState,
    phases: &[f64],
    config: &ClusterPipelineConfig,
) -> Result<GaussianState> {
    let n = config.pixel_channels.len();
    if pixels.n_modes() != n || phases.len() != n {
        return Err(QpaError::domain(format!(
            "expected {n} pixel modes and phases, got {} and {}",
            pixels.n_modes(),
            phases.len()
        )));
    }
    let mut m = DMatrix::from_element(2, n, Complex64::default());
    for (row, gains) in config.combiner_map.iter().enumerate() {
        let norm = gains.iter().map(|g| g * g).sum::<f64>().sqrt();
        for j in 0..n {
            m[(row, j)] = Complex64::from_polar(gains[j] / norm, phases[j]);
        }
    }
    gaussian::apply_linear_network(pixels, &m)
}

/// Sample-domain `G ⊕ G` combining of pixel records.
pub fn power_combine_halves_records(
    pixels: &[MeasurementRecord],
    config: &ClusterPipelineConfig,
) -> Result<[MeasurementRecord; 2]> {
    let n = config.pixel_channels.len();
    if pixels.len() != n {
        return Err(QpaError::domain(format!("expected {n} pixel records, got {}", pixels.len())));
    }
    let [a, b] = config.row_settings(&vec![0.0; n])?;
    let mut first = receiver::combine_records(pixels, &a)?;
    let mut second = receiver::combine_records(pixels, &b)?;
    first.channel = 0;
    second.channel = 1;
    Ok([first, second])
}

pub fn beamsplitter_matrix() -> DMatrix<Complex64> {
    let s = FRAC_1_SQRT_2;
    DMatrix::from_row_slice(2, 2, &[Complex64::new(s, 0.0), Complex64::new(0.0, s), Complex64::new(0.0, s), Complex64::new(s, 0.0)])
}

/// Applies `S` to a two-mode state.
pub fn emulated_beamsplitter(pair: &GaussianState) -> Result<GaussianState> {
    if pair.n_modes() != 2 {
        return Err(QpaError::domain("beamsplitter acts on exactly two modes"));
    }
    gaussian::apply_linear_network(pair, &beamsplitter_matrix())
}

/// Simultaneous `X(θ)` and `P(θ)` samples of one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraturePairs {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl QuadraturePairs {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Splits a record taken with LO segments alternating `θ`, `θ + π/2` into
/// quadrature pairs: sample `i` of an even segment is paired with sample `i`
/// of the following odd segment. A trailing unpaired segment is dropped.
pub fn interleaved_quadratures(record: &MeasurementRecord, segment_len: usize) -> Result<QuadraturePairs> {
    if segment_len == 0 {
        return Err(QpaError::domain("segment length must be positive"));
    }
    let pairs = record.len() / (2 * segment_len);
    if pairs == 0 {
        return Err(QpaError::domain("record holds no complete segment pair"));
    }
    let mut x = Vec::with_capacity(pairs * segment_len);
    let mut p = Vec::with_capacity(pairs * segment_len);
    for k in 0..pairs {
        let base = 2 * k * segment_len;
        x.extend_from_slice(&record.samples[base..base + segment_len]);
        p.extend_from_slice(&record.samples[base + segment_len..base + 2 * segment_len]);
    }
    Ok(QuadraturePairs { x, p })
}

/// LO phase schedule for interleaved acquisition.
pub fn interleaved_lo_phase(ramp: &PhaseRamp, segment_len: usize) -> impl Fn(usize) -> f64 + Sync + '_ {
    move |i| ramp.phase_at(i) + if (i / segment_len) % 2 == 1 { FRAC_PI_2 } else { 0.0 }
}

/// Sample-domain beamsplitter on quadrature pairs.
pub fn emulated_beamsplitter_samples(
    m1: &QuadraturePairs,
    m2: &QuadraturePairs,
) -> Result<(QuadraturePairs, QuadraturePairs)> {
    if m1.len() != m2.len() || m1.x.len() != m1.p.len() || m2.x.len() != m2.p.len() {
        return Err(QpaError::domain("quadrature pair series differ in length"));
    }
    let s = FRAC_1_SQRT_2;
    let n = m1.len();
    let mut m3 = QuadraturePairs { x: Vec::with_capacity(n), p: Vec::with_capacity(n) };
    let mut m4 = QuadraturePairs { x: Vec::with_capacity(n), p: Vec::with_capacity(n) };
    for i in 0..n {
        let (x1, p1, x2, p2) = (m1.x[i], m1.p[i], m2.x[i], m2.p[i]);
        m3.x.push(s * (x1 + p2));
        m3.p.push(s * (p1 - x2));
        m4.x.push(s * (p1 + x2));
        m4.p.push(s * (p2 - x1));
    }
    Ok((m3, m4))
}

/// Inseparability of modes 3 and 4 of a two-mode state at LO phase `theta`,
/// normalized so that vacuum gives exactly 1.
pub fn inseparability(pair: &GaussianState, theta: f64) -> Result<f64> {
    if pair.n_modes() != 2 {
        return Err(QpaError::domain("inseparability needs a two-mode state"));
    }
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::default();
    let x3 = gaussian::quadrature_functional(&[one, zero], theta);
    let p3 = gaussian::quadrature_functional(&[one, zero], theta + FRAC_PI_2);
    let x4 = gaussian::quadrature_functional(&[zero, one], theta);
    let p4 = gaussian::quadrature_functional(&[zero, one], theta + FRAC_PI_2);
    let a: DVector<f64> = &p4 - &x3;
    let b: DVector<f64> = &p3 - &x4;
    Ok((pair.functional_variance(&a) + pair.functional_variance(&b)) / (4.0 * SIGMA_VAC))
}

/// Closed-form inseparability for two in-phase outputs of efficiencies
/// `eta1`, `eta2` from one squeezed mode: `(ΔX₁² + ΔX₂²)/2` in vacuum units.
pub fn inseparability_closed_form(r: f64, eta1: f64, eta2: f64, theta: f64) -> f64 {
    (gaussian::lossy_squeezed_variance(r, eta1, theta) + gaussian::lossy_squeezed_variance(r, eta2, theta))
        / (2.0 * SIGMA_VAC)
}

fn variance(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    v.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn sample_inseparability(m3: &QuadraturePairs, m4: &QuadraturePairs, range: std::ops::Range<usize>, vac: f64) -> f64 {
    let a = range.clone().map(|i| m4.p[i] - m3.x[i]);
    let b = range.map(|i| m3.p[i] - m4.x[i]);
    (variance(a) + variance(b)) / (4.0 * vac)
}

/// Inseparability trace over consecutive windows of paired samples.
#[derive(Debug, Clone, PartialEq)]
pub struct InseparabilityTrace {
    pub theta_rad: Vec<f64>,
    pub value: Vec<f64>,
    pub error: Vec<f64>,
}

impl InseparabilityTrace {
    pub fn table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["theta_rad", "I", "I_err"]);
        for i in 0..self.value.len() {
            t.push_numbers(&[self.theta_rad[i], self.value[i], self.error[i]]);
        }
        t
    }

    pub fn min(&self) -> Option<(usize, f64)> {
        self.value.iter().cloned().enumerate().min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Windowed sample inseparability with a block-bootstrap error per window.
/// `vacuum_variance` is the per-quadrature vacuum variance in sample units;
/// `window_theta` maps a window index to its mean LO phase.
#[allow(clippy::too_many_arguments)]
pub fn inseparability_samples(
    m3: &QuadraturePairs,
    m4: &QuadraturePairs,
    vacuum_variance: f64,
    window: usize,
    blocks: usize,
    resamples: usize,
    seed: u64,
    window_theta: impl Fn(usize) -> f64,
) -> Result<InseparabilityTrace> {
    if m3.len() != m4.len() {
        return Err(QpaError::domain("mode series differ in length"));
    }
    if !(vacuum_variance > 0.0) {
        return Err(QpaError::domain("vacuum reference variance must be positive"));
    }
    if window < 2 * blocks || blocks < 2 {
        return Err(QpaError::domain("window too short for the bootstrap blocks"));
    }
    let n_windows = m3.len() / window;
    if n_windows == 0 {
        return Err(QpaError::domain("fewer samples than one inseparability window"));
    }
    let block = window / blocks;
    let mut trace = InseparabilityTrace { theta_rad: Vec::new(), value: Vec::new(), error: Vec::new() };
    for w in 0..n_windows {
        let start = w * window;
        let value = sample_inseparability(m3, m4, start..start + window, vacuum_variance);
        // per-block sums of (a, a², b, b²) make each resample O(blocks)
        let sums: Vec<[f64; 4]> = (0..blocks)
            .map(|k| {
                let mut s = [0.0; 4];
                for i in start + k * block..start + (k + 1) * block {
                    let a = m4.p[i] - m3.x[i];
                    let b = m3.p[i] - m4.x[i];
                    s[0] += a;
                    s[1] += a * a;
                    s[2] += b;
                    s[3] += b * b;
                }
                s
            })
            .collect();
        let mut rng = receiver::rng(receiver::derive_seed(seed, w as u64));
        let m = (blocks * block) as f64;
        let reps: Vec<f64> = (0..resamples)
            .map(|_| {
                let mut t = [0.0; 4];
                for _ in 0..blocks {
                    let s = &sums[rng.random_range(0..blocks)];
                    for q in 0..4 {
                        t[q] += s[q];
                    }
                }
                let va = (t[1] - t[0] * t[0] / m) / (m - 1.0);
                let vb = (t[3] - t[2] * t[2] / m) / (m - 1.0);
                (va + vb) / (4.0 * vacuum_variance)
            })
            .collect();
        let mean = reps.iter().sum::<f64>() / resamples as f64;
        let err = (reps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt();
        trace.theta_rad.push(window_theta(w));
        trace.value.push(value);
        trace.error.push(err);
    }
    Ok(trace)
}
