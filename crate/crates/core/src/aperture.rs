//! Antenna aperture geometry and free-space-to-antenna coupling.
//!
//! The array is modelled along its axis (x): each antenna has a transverse
//! mode function `E_j(x)` and the incident Gaussian beam `u₀(x)` couples into
//! antenna `j` with amplitude `∫ E_j(x) u₀(x) dx`. Along the antenna length the
//! overlap is a single scalar factor shared by every antenna.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

use crate::error::{QpaError, Result};
use crate::receiver::ChannelSettings;

/// Simpson intervals per antenna; 32 antennas give the 8192-point grid.
pub const QUAD_INTERVALS_PER_ANTENNA: usize = 256;

/// Mode profile of an antenna along the array axis.
pub trait AntennaProfile: Send + Sync {
    /// Support relative to the antenna center, in μm.
    fn support(&self) -> (f64, f64);
    /// Field amplitude at offset `dx` from the center (unit L2 norm).
    fn amplitude(&self, dx: f64) -> f64;
}

/// Uniform amplitude over the antenna width.
#[derive(Debug, Clone, Copy)]
pub struct TopHat {
    pub width_um: f64,
}

impl AntennaProfile for TopHat {
    fn support(&self) -> (f64, f64) {
        (-0.5 * self.width_um, 0.5 * self.width_um)
    }

    fn amplitude(&self, dx: f64) -> f64 {
        if dx.abs() <= 0.5 * self.width_um {
            self.width_um.powf(-0.5)
        } else {
            0.0
        }
    }
}

/// Antenna mode along its length (orthogonal to the array axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LengthAxisMode {
    /// Perfectly matched to the beam.
    Matched,
    /// Gaussian emission profile of the given 1/e² intensity radius.
    Gaussian { waist_um: f64 },
}

impl LengthAxisMode {
    /// Power overlap with a Gaussian beam of radius `beam_waist_um`.
    pub fn overlap(&self, beam_waist_um: f64) -> f64 {
        match *self {
            LengthAxisMode::Matched => 1.0,
            LengthAxisMode::Gaussian { waist_um } => {
                2.0 * waist_um * beam_waist_um / (waist_um * waist_um + beam_waist_um * beam_waist_um)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApertureGeometry {
    pub n_antennas: usize,
    pub pitch_um: f64,
    pub antenna_width_um: f64,
    pub antenna_length_um: f64,
    pub wavelength_nm: f64,
    pub insertion_loss_db: f64,
    /// FWHM of the single-antenna power pattern; `inf` gives a flat envelope.
    pub element_pattern_fwhm_deg: f64,
    pub length_axis: LengthAxisMode,
}

impl Default for ApertureGeometry {
    fn default() -> Self {
        Self {
            n_antennas: 32,
            pitch_um: 17.5,
            antenna_width_um: 16.7,
            antenna_length_um: 597.0,
            wavelength_nm: 1550.0,
            insertion_loss_db: 3.78,
            element_pattern_fwhm_deg: 2.7,
            length_axis: LengthAxisMode::Gaussian { waist_um: 213.0 },
        }
    }
}

impl ApertureGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 {
            return Err(QpaError::domain("geometry needs at least one antenna"));
        }
        let lengths = [
            ("pitch_um", self.pitch_um),
            ("antenna_width_um", self.antenna_width_um),
            ("antenna_length_um", self.antenna_length_um),
            ("wavelength_nm", self.wavelength_nm),
            ("element_pattern_fwhm_deg", self.element_pattern_fwhm_deg),
        ];
        for (name, value) in lengths {
            if value.is_nan() || value <= 0.0 {
                return Err(QpaError::domain(format!("{name} must be positive, got {value}")));
            }
        }
        if self.pitch_um < self.antenna_width_um {
            return Err(QpaError::domain("pitch must be at least the antenna width"));
        }
        if !(self.insertion_loss_db >= 0.0) {
            return Err(QpaError::domain("insertion loss must be >= 0 dB"));
        }
        if let LengthAxisMode::Gaussian { waist_um } = self.length_axis {
            if !(waist_um > 0.0) {
                return Err(QpaError::domain("length-axis waist must be positive"));
            }
        }
        Ok(())
    }

    pub fn wavenumber_per_um(&self) -> f64 {
        2.0 * PI / (self.wavelength_nm * 1e-3)
    }

    /// Center of antenna `j` relative to the array center, μm.
    pub fn antenna_center(&self, j: usize) -> f64 {
        (j as f64 - 0.5 * (self.n_antennas as f64 - 1.0)) * self.pitch_um
    }

    /// Phase step between adjacent antennas for a plane wave at `theta_deg`.
    pub fn phase_step(&self, theta_deg: f64) -> f64 {
        self.wavenumber_per_um() * self.pitch_um * theta_deg.to_radians().sin()
    }

    pub fn insertion_amplitude(&self) -> f64 {
        10f64.powf(-self.insertion_loss_db / 20.0)
    }

    fn profile(&self) -> TopHat {
        TopHat { width_um: self.antenna_width_um }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamSpec {
    /// 1/e² intensity diameter.
    pub diameter_um: f64,
    pub center_offset_um: f64,
    pub incidence_angle_deg: f64,
}

impl Default for BeamSpec {
    fn default() -> Self {
        Self { diameter_um: 200.0, center_offset_um: 0.0, incidence_angle_deg: 0.0 }
    }
}

impl BeamSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.diameter_um > 0.0) || !self.diameter_um.is_finite() {
            return Err(QpaError::domain(format!("beam diameter must be positive, got {}", self.diameter_um)));
        }
        if !self.center_offset_um.is_finite() || !self.incidence_angle_deg.is_finite() {
            return Err(QpaError::domain("beam offset and angle must be finite"));
        }
        Ok(())
    }

    pub fn waist_um(&self) -> f64 {
        0.5 * self.diameter_um
    }

    pub fn at_angle(&self, theta_deg: f64) -> BeamSpec {
        BeamSpec { incidence_angle_deg: theta_deg, ..self.clone() }
    }
}

/// Complex coupling amplitudes of the signal beam into each antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingVector {
    amplitudes: Vec<Complex64>,
    insertion_amplitude: f64,
    outside_aperture: bool,
}

impl CouplingVector {
    pub fn new(amplitudes: Vec<Complex64>, insertion_amplitude: f64) -> Result<Self> {
        let total: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
        if total > 1.0 + 1e-9 {
            return Err(QpaError::domain(format!("coupling vector carries more than unit power ({total})")));
        }
        if !(insertion_amplitude > 0.0 && insertion_amplitude <= 1.0) {
            return Err(QpaError::domain("insertion amplitude must lie in (0, 1]"));
        }
        Ok(Self { amplitudes, insertion_amplitude, outside_aperture: false })
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// Set when the beam misses the aperture entirely.
    pub fn outside_aperture(&self) -> bool {
        self.outside_aperture
    }

    pub fn insertion_amplitude(&self) -> f64 {
        self.insertion_amplitude
    }

    /// Amplitudes with the antenna insertion loss removed.
    pub fn deembedded(&self) -> Vec<Complex64> {
        self.amplitudes.iter().map(|c| c / self.insertion_amplitude).collect()
    }

    pub fn total_power(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Applies fixed per-channel phases (e.g. LO path offsets) to the plant.
    pub fn with_phase_offsets(&self, offsets: &[f64]) -> Result<CouplingVector> {
        if offsets.len() != self.amplitudes.len() {
            return Err(QpaError::domain("one phase offset per antenna required"));
        }
        let amplitudes = self
            .amplitudes
            .iter()
            .zip(offsets)
            .map(|(c, &phi)| c * Complex64::from_polar(1.0, phi))
            .collect();
        Ok(CouplingVector { amplitudes, ..self.clone() })
    }

    /// Scales every amplitude, e.g. to fold in downstream chain loss.
    pub fn scaled(&self, factor: f64) -> Result<CouplingVector> {
        if !(0.0..=1.0).contains(&factor) {
            return Err(QpaError::domain("amplitude scale must lie in [0, 1]"));
        }
        let amplitudes = self.amplitudes.iter().map(|c| c * factor).collect();
        Ok(CouplingVector { amplitudes, ..self.clone() })
    }
}

/// Gaussian power envelope of a single antenna, 1 at broadside and 1/2 at
/// `±fwhm/2`.
pub fn element_pattern(geometry: &ApertureGeometry, theta_deg: f64) -> f64 {
    let fwhm = geometry.element_pattern_fwhm_deg;
    (-4.0 * LN_2 * (theta_deg / fwhm).powi(2)).exp()
}

/// Composite Simpson rule over `[lo, hi]` with an even number of intervals.
fn simpson(lo: f64, hi: f64, intervals: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = intervals + intervals % 2;
    let h = (hi - lo) / n as f64;
    let mut sum = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(lo + i as f64 * h);
    }
    sum * h / 3.0
}

/// Real overlap `∫ E_j(x) u₀(x) dx` of each antenna mode with the beam,
/// before insertion loss, envelope and tilt.
pub fn antenna_overlaps(geometry: &ApertureGeometry, beam: &BeamSpec, intervals: usize) -> Vec<f64> {
    let profile = geometry.profile();
    let w = beam.waist_um();
    let norm = (2.0 / (PI * w * w)).powf(0.25);
    let x0 = beam.center_offset_um;
    let (lo, hi) = profile.support();
    (0..geometry.n_antennas)
        .map(|j| {
            let xj = geometry.antenna_center(j);
            simpson(lo, hi, intervals, |dx| {
                let u = norm * (-((xj + dx - x0) / w).powi(2)).exp();
                profile.amplitude(dx) * u
            })
        })
        .collect()
}

/// Coupling amplitudes `c_j` of the beam into each antenna, including the
/// insertion loss, length-axis overlap, element envelope and the plane-wave
/// phase tilt `e^{i k x_j sin θ}` at the antenna centers.
pub fn coupling_vector(geometry: &ApertureGeometry, beam: &BeamSpec) -> Result<CouplingVector> {
    coupling_vector_with_resolution(geometry, beam, QUAD_INTERVALS_PER_ANTENNA)
}

pub fn coupling_vector_with_resolution(
    geometry: &ApertureGeometry,
    beam: &BeamSpec,
    intervals: usize,
) -> Result<CouplingVector> {
    geometry.validate()?;
    beam.validate()?;
    if intervals < 2 {
        return Err(QpaError::domain("quadrature needs at least two intervals per antenna"));
    }
    let overlaps = antenna_overlaps(geometry, beam, intervals);
    let insertion = geometry.insertion_amplitude();
    if overlaps.iter().all(|o| o.abs() < 1e-12) {
        return Ok(CouplingVector {
            amplitudes: vec![Complex64::new(0.0, 0.0); geometry.n_antennas],
            insertion_amplitude: insertion,
            outside_aperture: true,
        });
    }
    let theta = beam.incidence_angle_deg;
    let scale = insertion
        * element_pattern(geometry, theta).sqrt()
        * geometry.length_axis.overlap(beam.waist_um()).sqrt();
    let k_sin = geometry.wavenumber_per_um() * theta.to_radians().sin();
    let amplitudes = overlaps
        .iter()
        .enumerate()
        .map(|(j, &o)| Complex64::from_polar(scale * o, k_sin * geometry.antenna_center(j)))
        .collect();
    CouplingVector::new(amplitudes, insertion)
}

/// `|Σ w_j c_j|² / Σ g_j²` for arbitrary complex amplitudes.
pub fn combined_efficiency(amplitudes: &[Complex64], settings: &ChannelSettings) -> Result<f64> {
    if settings.len() != amplitudes.len() {
        return Err(QpaError::domain(format!(
            "{} channel settings for {} antennas",
            settings.len(),
            amplitudes.len()
        )));
    }
    let norm = settings.gain_norm_sqr();
    if norm == 0.0 {
        return Err(QpaError::domain("all channel gains are zero"));
    }
    let field: Complex64 = settings.weights().iter().zip(amplitudes).map(|(w, c)| w * c).sum();
    Ok(field.norm_sqr() / norm)
}

/// Geometric efficiency of the weighted array (insertion loss de-embedded).
pub fn geometric_efficiency(c: &CouplingVector, settings: &ChannelSettings) -> Result<f64> {
    combined_efficiency(&c.deembedded(), settings)
}

/// Geometric loss in dB.
pub fn geometric_loss(c: &CouplingVector, settings: &ChannelSettings) -> Result<f64> {
    Ok(-10.0 * geometric_efficiency(c, settings)?.log10())
}

/// Gains `∝ |c_j|` and phases `−arg c_j` on the selected channels.
pub fn matched_settings(c: &CouplingVector, active: &[bool]) -> Result<ChannelSettings> {
    if active.len() != c.len() {
        return Err(QpaError::domain("active mask length must match the coupling vector"));
    }
    let gains = c.amplitudes().iter().zip(active).map(|(a, &on)| if on { a.norm() } else { 0.0 }).collect();
    let phases = c.amplitudes().iter().map(|a| (-a.arg()).rem_euclid(2.0 * PI)).collect();
    ChannelSettings::new(gains, phases)
}

/// Uniform gains on the selected channels, phases conjugate to the plant.
pub fn phase_matched_uniform(c: &CouplingVector, active: &[bool]) -> Result<ChannelSettings> {
    if active.len() != c.len() {
        return Err(QpaError::domain("active mask length must match the coupling vector"));
    }
    let gains = active.iter().map(|&on| if on { 1.0 } else { 0.0 }).collect();
    let phases = c.amplitudes().iter().map(|a| (-a.arg()).rem_euclid(2.0 * PI)).collect();
    ChannelSettings::new(gains, phases)
}
