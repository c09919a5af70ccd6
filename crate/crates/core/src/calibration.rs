//! Phase calibration, beam steering and angular scans against a simulated
//! plant.
//!
//! The plant is a [`CouplingVector`] whose phases already include the unknown
//! per-channel LO path offsets. The calibration only observes the classical
//! tone power at the combined output.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::aperture::{self, ApertureGeometry, BeamSpec, CouplingVector};
use crate::error::{QpaError, Result};
use crate::experiments::output::{sig9, CsvTable};
use crate::receiver::{self, ChannelSettings};

/// Thermo-optic phase shifter: `φ = α V²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorModel {
    pub alpha: f64,
    pub v_max: f64,
}

impl Default for ActuatorModel {
    fn default() -> Self {
        Self { alpha: 2.0 * PI / 25.0, v_max: 5.0 }
    }
}

impl ActuatorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.v_max > 0.0) {
            return Err(QpaError::domain("actuator alpha and v_max must be positive"));
        }
        Ok(())
    }

    pub fn phase(&self, voltage: f64) -> f64 {
        self.alpha * voltage * voltage
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub initial_step: f64,
    pub shrink_factor: f64,
    pub n_iterations: usize,
    /// Relative Gaussian noise on each feedback reading; 0 disables it.
    pub feedback_noise: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { initial_step: 5.0 / 8.0, shrink_factor: 0.25, n_iterations: 4, feedback_noise: 0.0 }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return Err(QpaError::domain("shrink factor must lie in (0, 1)"));
        }
        if self.n_iterations == 0 {
            return Err(QpaError::domain("need at least one calibration iteration"));
        }
        if !(self.initial_step > 0.0) {
            return Err(QpaError::domain("initial step must be positive"));
        }
        if !(self.feedback_noise >= 0.0) {
            return Err(QpaError::domain("feedback noise must be >= 0"));
        }
        Ok(())
    }
}

/// Coherent tone power `|Σ g_j e^{iφ_j} c_j|²` at the combined output.
pub fn classical_feedback(settings: &ChannelSettings, c: &[Complex64]) -> f64 {
    settings.weights().iter().zip(c).map(|(w, a)| w * a).sum::<Complex64>().norm_sqr()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub channel: usize,
    pub voltage: f64,
    pub feedback: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub settings: ChannelSettings,
    pub trace: Vec<TraceRow>,
}

impl CalibrationResult {
    pub fn final_feedback(&self) -> Option<f64> {
        self.trace.last().map(|r| r.feedback)
    }

    pub fn trace_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["iteration", "channel", "voltage", "feedback"]);
        for r in &self.trace {
            t.push(vec![r.iteration.to_string(), r.channel.to_string(), sig9(r.voltage), sig9(r.feedback)]);
        }
        t
    }
}

/// Sweep order: edges toward the middle, `0, N−1, 1, N−2, …`.
pub fn edge_to_middle_order(n: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(n);
    let (mut lo, mut hi) = (0usize, n);
    while lo < hi {
        order.push(lo);
        lo += 1;
        if lo < hi {
            hi -= 1;
            order.push(hi);
        }
    }
    order
}

/// Coordinate-wise coarse-to-fine search over the phase-shifter voltages of
/// the channels selected by `active` (uniform RF gains). Starts from random
/// voltages drawn from `seed`.
pub fn calibrate_phases(
    config: &CalibrationConfig,
    actuator: &ActuatorModel,
    plant: &CouplingVector,
    active: &[bool],
    seed: u64,
) -> Result<CalibrationResult> {
    config.validate()?;
    actuator.validate()?;
    if active.len() != plant.len() {
        return Err(QpaError::domain("active mask length must match the plant"));
    }
    let c = plant.amplitudes();
    if c.iter().zip(active).all(|(a, &on)| !on || a.norm_sqr() == 0.0) {
        return Err(QpaError::domain("plant has no nonzero coupling on the active channels"));
    }
    let mut rng = receiver::rng(seed);
    let gains: Vec<f64> = active.iter().map(|&on| if on { 1.0 } else { 0.0 }).collect();
    let mut volts: Vec<f64> = (0..c.len()).map(|_| rng.random_range(0.0..=actuator.v_max)).collect();
    let term = |j: usize, v: f64| c[j] * Complex64::from_polar(gains[j], actuator.phase(v));
    let mut field: Complex64 = (0..c.len()).map(|j| term(j, volts[j])).sum();

    let mut order: Vec<usize> = edge_to_middle_order(c.len()).into_iter().filter(|&j| active[j]).collect();
    let mut trace = Vec::new();
    let mut step = config.initial_step;
    for iteration in 0..config.n_iterations {
        for &j in &order {
            let rest = field - term(j, volts[j]);
            let grid = sweep_grid(volts[j], step, actuator.v_max);
            let mut best = (volts[j], f64::NEG_INFINITY);
            for v in grid {
                let mut fb = (rest + term(j, v)).norm_sqr();
                if config.feedback_noise > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    fb *= 1.0 + config.feedback_noise * z;
                }
                if fb > best.1 {
                    best = (v, fb);
                }
            }
            volts[j] = best.0;
            field = rest + term(j, best.0);
            trace.push(TraceRow { iteration, channel: j, voltage: best.0, feedback: best.1 });
        }
        order.reverse();
        step *= config.shrink_factor;
    }
    let phases = volts.iter().map(|&v| actuator.phase(v).rem_euclid(2.0 * PI)).collect();
    let mut settings = ChannelSettings::new(gains, phases)?;
    settings.tops_voltages = Some(volts);
    Ok(CalibrationResult { settings, trace })
}

/// Ascending voltages over `[0, v_max]` at `step`, always including `center`.
fn sweep_grid(center: f64, step: f64, v_max: f64) -> Vec<f64> {
    let n = (v_max / step).round() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| (k as f64 * step).min(v_max)).collect();
    grid.push(center);
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    grid
}

/// Adds the linear steering mask `−k·pitch·j·sin θ` to the LO phases.
pub fn steer(settings: &ChannelSettings, geometry: &ApertureGeometry, theta_deg: f64) -> ChannelSettings {
    let step = geometry.phase_step(theta_deg);
    let phases = settings
        .phases
        .iter()
        .enumerate()
        .map(|(j, p)| (p - step * j as f64).rem_euclid(2.0 * PI))
        .collect();
    ChannelSettings { phases, ..settings.clone() }
}

/// Efficiency versus incidence angle, with the normalized column relative to
/// the angle closest to broadside.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularScan {
    pub angles_deg: Vec<f64>,
    pub efficiency: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl AngularScan {
    fn from_efficiencies(angles_deg: Vec<f64>, efficiency: Vec<f64>) -> Result<Self> {
        let i0 = angles_deg
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .ok_or_else(|| QpaError::domain("empty angle list"))?;
        let reference = efficiency[i0];
        if !(reference > 0.0) {
            return Err(QpaError::numerical("zero efficiency at the reference angle"));
        }
        let normalized = efficiency.iter().map(|e| e / reference).collect();
        Ok(Self { angles_deg, efficiency, normalized })
    }

    pub fn width(&self, level: f64) -> Result<f64> {
        extract_width(&self.angles_deg, &self.normalized, level)
    }

    pub fn table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["theta_deg", "efficiency", "normalized"]);
        for i in 0..self.angles_deg.len() {
            t.push_numbers(&[self.angles_deg[i], self.efficiency[i], self.normalized[i]]);
        }
        t
    }
}

fn check_angles(angles_deg: &[f64]) -> Result<()> {
    if angles_deg.len() < 3 {
        return Err(QpaError::domain("angle scan needs at least three angles"));
    }
    if angles_deg.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(QpaError::domain("angles must be strictly increasing"));
    }
    Ok(())
}

/// Geometric efficiency at each angle with `settings` held fixed.
pub fn beamwidth_scan(
    geometry: &ApertureGeometry,
    beam: &BeamSpec,
    settings: &ChannelSettings,
    angles_deg: &[f64],
) -> Result<AngularScan> {
    check_angles(angles_deg)?;
    let eff = angles_deg
        .par_iter()
        .map(|&theta| {
            let c = aperture::coupling_vector(geometry, &beam.at_angle(theta))?;
            aperture::geometric_efficiency(&c, settings)
        })
        .collect::<Result<Vec<_>>>()?;
    AngularScan::from_efficiencies(angles_deg.to_vec(), eff)
}

/// Recalibrates at every angle against a plant with random LO path offsets
/// and records the resulting geometric efficiency.
#[allow(clippy::too_many_arguments)]
pub fn fov_scan(
    geometry: &ApertureGeometry,
    beam: &BeamSpec,
    active: &[bool],
    angles_deg: &[f64],
    config: &CalibrationConfig,
    actuator: &ActuatorModel,
    seed: u64,
) -> Result<AngularScan> {
    check_angles(angles_deg)?;
    let eff = angles_deg
        .par_iter()
        .enumerate()
        .map(|(k, &theta)| {
            let c = aperture::coupling_vector(geometry, &beam.at_angle(theta))?;
            let plant = with_random_lo_offsets(&c, receiver::derive_seed(seed, 2 * k as u64))?;
            let cal = calibrate_phases(config, actuator, &plant, active, receiver::derive_seed(seed, 2 * k as u64 + 1))?;
            aperture::geometric_efficiency(&plant, &cal.settings)
        })
        .collect::<Result<Vec<_>>>()?;
    AngularScan::from_efficiencies(angles_deg.to_vec(), eff)
}

/// The plant seen by the calibration: coupling with uniform random LO phases.
pub fn with_random_lo_offsets(c: &CouplingVector, seed: u64) -> Result<CouplingVector> {
    let mut rng = receiver::rng(seed);
    let offsets: Vec<f64> = (0..c.len()).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    c.with_phase_offsets(&offsets)
}

/// Full width at `level` of a single-peaked profile, by linear interpolation
/// on both sides of the maximum.
pub fn extract_width(angles_deg: &[f64], values: &[f64], level: f64) -> Result<f64> {
    if angles_deg.len() != values.len() || angles_deg.len() < 2 {
        return Err(QpaError::domain("angle and value columns must match and hold two or more points"));
    }
    let peak = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty");
    if values[peak] < level {
        return Err(QpaError::numerical(format!("profile never reaches level {level}")));
    }
    let cross = |i: usize, k: usize| {
        let t = (values[i] - level) / (values[i] - values[k]);
        angles_deg[i] + t * (angles_deg[k] - angles_deg[i])
    };
    let left = (1..=peak).rev().find(|&i| values[i - 1] < level).map(|i| cross(i, i - 1));
    let right = (peak..angles_deg.len() - 1).find(|&i| values[i + 1] < level).map(|i| cross(i, i + 1));
    match (left, right) {
        (Some(l), Some(r)) => Ok(r - l),
        _ => Err(QpaError::numerical(format!(
            "angle grid [{}, {}] does not bracket the {level} crossing on both sides",
            angles_deg[0],
            angles_deg[angles_deg.len() - 1]
        ))),
    }
}

/// Uniformly spaced angles from `lo` to `hi` inclusive.
pub fn angle_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
