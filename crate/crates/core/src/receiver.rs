//! Homodyne receiver array: noise model, seeded quadrature sampling and RF
//! combining.
//!
//! Samples are expressed in quadrature units, so a shot-noise-limited vacuum
//! channel has variance [`SIGMA_VAC`]. Electronic noise adds an independent
//! Gaussian of variance `10^(−SNC/10)·σ_vac` to every channel.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

use crate::aperture::CouplingVector;
use crate::error::{QpaError, Result};
use crate::experiments::output::sig9;
use crate::gaussian::{self, GaussianState, SIGMA_VAC};

/// Per-channel RF gain and net LO phase; together they define the array mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSettings {
    pub gains: Vec<f64>,
    pub phases: Vec<f64>,
    pub tops_voltages: Option<Vec<f64>>,
}

impl ChannelSettings {
    pub fn new(gains: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        if gains.len() != phases.len() {
            return Err(QpaError::domain(format!(
                "{} gains but {} phases",
                gains.len(),
                phases.len()
            )));
        }
        if gains.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(QpaError::domain("gains must be finite and non-negative"));
        }
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(QpaError::domain("phases must be finite"));
        }
        Ok(Self { gains, phases, tops_voltages: None })
    }

    /// Unit gains and zero phases on the channels selected by `mask`.
    pub fn from_mask(mask: &[bool]) -> Self {
        Self {
            gains: mask.iter().map(|&on| if on { 1.0 } else { 0.0 }).collect(),
            phases: vec![0.0; mask.len()],
            tops_voltages: None,
        }
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Complex channel weights `g_j e^{iφ_j}`.
    pub fn weights(&self) -> Vec<Complex64> {
        self.gains.iter().zip(&self.phases).map(|(&g, &p)| Complex64::from_polar(g, p)).collect()
    }

    pub fn gain_norm_sqr(&self) -> f64 {
        self.gains.iter().map(|g| g * g).sum()
    }

    pub fn active_channels(&self) -> Vec<usize> {
        self.gains.iter().enumerate().filter(|(_, &g)| g > 0.0).map(|(j, _)| j).collect()
    }

    /// Same phases with the gains of inactive channels set to zero.
    pub fn restricted(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(QpaError::domain("mask length must match the channel count"));
        }
        let gains = self.gains.iter().zip(mask).map(|(&g, &on)| if on { g } else { 0.0 }).collect();
        Ok(Self { gains, ..self.clone() })
    }
}

/// The `k` channels closest to the array center. For `k = 1` this is the
/// channel just below the center (channel 16 of 32, counting from one).
pub fn centered_mask(n: usize, k: usize) -> Vec<bool> {
    let k = k.min(n);
    let start = (n - k) / 2;
    (0..n).map(|j| j >= start && j < start + k).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverModel {
    pub pd_efficiency: f64,
    pub snc_db: f64,
    pub p_knee_uw: f64,
    pub cmrr_db: f64,
    pub on_chip_loss_db: f64,
    pub collimator_loss_db: f64,
    /// Lumped loss of the RF chain after detection.
    pub rf_loss_db: f64,
    /// Classical common-mode noise power relative to shot noise before
    /// rejection; zero by default.
    pub common_mode_noise: f64,
}

impl Default for ReceiverModel {
    fn default() -> Self {
        Self::high_snc()
    }
}

impl ReceiverModel {
    /// Sensing configuration.
    pub fn high_snc() -> Self {
        Self {
            pd_efficiency: 0.70,
            snc_db: 30.3,
            p_knee_uw: 12.5,
            cmrr_db: 90.2,
            on_chip_loss_db: 5.62,
            collimator_loss_db: 0.8,
            rf_loss_db: 0.0,
            common_mode_noise: 0.0,
        }
    }

    /// Communications configuration (parameters only; no frequency response).
    pub fn high_bandwidth() -> Self {
        Self { snc_db: 14.0, p_knee_uw: 521.0, ..Self::high_snc() }
    }

    pub fn validate(&self) -> Result<()> {
        let db = [
            ("snc_db", self.snc_db),
            ("cmrr_db", self.cmrr_db),
            ("on_chip_loss_db", self.on_chip_loss_db),
            ("collimator_loss_db", self.collimator_loss_db),
            ("rf_loss_db", self.rf_loss_db),
        ];
        for (name, value) in db {
            if !(value >= 0.0) {
                return Err(QpaError::domain(format!("{name} must be >= 0 dB, got {value}")));
            }
        }
        if !(self.pd_efficiency > 0.0 && self.pd_efficiency <= 1.0) {
            return Err(QpaError::domain("photodiode efficiency must lie in (0, 1]"));
        }
        if !(self.p_knee_uw > 0.0) {
            return Err(QpaError::domain("LO power knee must be positive"));
        }
        if !(self.common_mode_noise >= 0.0) {
            return Err(QpaError::domain("common-mode noise must be >= 0"));
        }
        Ok(())
    }

    /// Extra noise variance per channel in units of the vacuum variance:
    /// electronic floor plus the common-mode leak through finite CMRR.
    pub fn excess_noise_fraction(&self) -> f64 {
        10f64.powf(-self.snc_db / 10.0) + self.common_mode_noise * 10f64.powf(-self.cmrr_db / 10.0)
    }

    /// Efficiency-equivalent of the electronic noise, `1 − 10^(−SNC/10)`.
    pub fn electronic_efficiency(&self) -> f64 {
        1.0 - 10f64.powf(-self.snc_db / 10.0)
    }

    /// Transmission after the antenna: waveguide residual of the on-chip
    /// budget, photodiode efficiency, collimator and RF chain.
    pub fn chain_efficiency(&self, insertion_loss_db: f64) -> f64 {
        let pd_loss_db = -10.0 * self.pd_efficiency.log10();
        let residual_db = (self.on_chip_loss_db - insertion_loss_db - pd_loss_db).max(0.0);
        10f64.powf(-(residual_db + self.collimator_loss_db + self.rf_loss_db) / 10.0) * self.pd_efficiency
    }
}

/// Total output noise over the electronic floor versus LO power, in dB.
pub fn snc_curve(model: &ReceiverModel, p_lo_uw: f64) -> Result<f64> {
    if !(p_lo_uw >= 0.0) {
        return Err(QpaError::domain(format!("LO power must be >= 0, got {p_lo_uw}")));
    }
    Ok(10.0 * (1.0 + p_lo_uw / model.p_knee_uw).log10())
}

/// Effective efficiency of channel `j`: coupling power times the receiver
/// chain, optionally including the electronic-noise equivalent.
pub fn channel_effective_efficiency(c: &CouplingVector, j: usize, model: &ReceiverModel, electronic: bool) -> Result<f64> {
    let amp = c
        .amplitudes()
        .get(j)
        .ok_or_else(|| QpaError::domain(format!("channel {j} out of range")))?;
    let il_db = -20.0 * c.insertion_amplitude().log10();
    let mut eta = amp.norm_sqr() * model.chain_efficiency(il_db);
    if electronic {
        eta *= model.electronic_efficiency();
    }
    Ok(eta)
}

/// LO phase ramp; the ramp frequency is the downconverted offset `ω − ω_LO`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseRamp {
    pub frequency_hz: f64,
    pub duration_s: f64,
    pub sampling_rate: f64,
}

impl Default for PhaseRamp {
    fn default() -> Self {
        Self { frequency_hz: 0.5, duration_s: 2.0, sampling_rate: 20e6 }
    }
}

impl PhaseRamp {
    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate > 0.0) || !(self.duration_s > 0.0) {
            return Err(QpaError::domain("sampling rate and duration must be positive"));
        }
        if !(self.sampling_rate > 2.0 * self.frequency_hz.abs()) {
            return Err(QpaError::domain("sampling rate must exceed twice the ramp frequency"));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sampling_rate).round() as usize
    }

    /// LO phase at sample `i`.
    pub fn phase_at(&self, i: usize) -> f64 {
        2.0 * PI * self.frequency_hz * i as f64 / self.sampling_rate
    }
}

/// A seeded stream of quadrature samples from one channel (or one combined
/// output, in which case `channel` is the output index).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub channel: usize,
    pub samples: Vec<f64>,
    pub seed: u64,
    pub sampling_rate: f64,
}

impl MeasurementRecord {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.sampling_rate
    }

    pub fn variance(&self) -> f64 {
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().sum::<f64>() / n;
        self.samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    /// Little-endian IEEE-754 doubles, one per sample, no header.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        for x in &self.samples {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(bytes: &[u8], channel: usize, seed: u64, sampling_rate: f64) -> Result<Self> {
        if bytes.len() % 8 != 0 {
            return Err(QpaError::domain("binary record length is not a multiple of 8 bytes"));
        }
        let samples = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self { channel, samples, seed, sampling_rate })
    }
}

/// Writes records as `time_s,channel,voltage` rows, record by record.
pub fn write_records_csv<W: Write>(mut out: W, records: &[MeasurementRecord]) -> Result<()> {
    writeln!(out, "time_s,channel,voltage")?;
    for rec in records {
        for (i, x) in rec.samples.iter().enumerate() {
            writeln!(out, "{},{},{}", sig9(rec.time(i)), rec.channel, sig9(*x))?;
        }
    }
    Ok(())
}

/// Stream identifier reserved for the squeezed source mode.
pub const SOURCE_STREAM: u64 = u64::MAX;

/// Counter-based seed derivation: stream `index` of `master` (SplitMix64
/// finalizer over the pair), independent of generation order.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Single-channel homodyne samples of a lossy squeezed vacuum: at sample time
/// `t` the variance is the lossy squeezed variance at LO phase
/// `2π·f·t` plus the receiver's excess noise.
pub fn homodyne_sample_stream(
    eta: f64,
    r: f64,
    ramp: &PhaseRamp,
    n_samples: usize,
    seed: u64,
    model: &ReceiverModel,
) -> Result<MeasurementRecord> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(QpaError::domain(format!("efficiency must lie in [0, 1], got {eta}")));
    }
    if n_samples == 0 {
        return Err(QpaError::domain("need at least one sample"));
    }
    ramp.validate()?;
    let excess = model.excess_noise_fraction() * SIGMA_VAC;
    let mut rng = rng(seed);
    let samples = (0..n_samples)
        .map(|i| {
            let var = gaussian::lossy_squeezed_variance(r, eta, ramp.phase_at(i)) + excess;
            var.sqrt() * normal(&mut rng)
        })
        .collect();
    Ok(MeasurementRecord { channel: 0, samples, seed, sampling_rate: ramp.sampling_rate })
}

/// Correlated multi-channel sampler for a squeezed source (squeezed along
/// LO phase 0) coupled into the array with amplitudes `c_j`.
///
/// The pixel modes are `a = c s + B v` with `B = I − κ ĉĉ†`,
/// `κ = 1 − √(1 − ‖c‖²)`, so that `BB† = I − cc†` and the channels stay
/// orthonormal modes. The source quadratures come from the source stream and
/// each channel's vacuum and excess-noise variates from that channel's derived
/// stream. Channels are generated in lockstep blocks, parallel across
/// channels within a block.
#[derive(Debug, Clone)]
pub struct ArraySampler {
    amplitudes: Vec<Complex64>,
    unit: Vec<Complex64>,
    kappa: f64,
    r: f64,
    excess_variance: f64,
    sampling_rate: f64,
}

const BLOCK: usize = 1 << 14;

impl ArraySampler {
    pub fn new(amplitudes: Vec<Complex64>, r: f64, model: &ReceiverModel, sampling_rate: f64) -> Result<Self> {
        let power: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
        if power > 1.0 + 1e-12 {
            return Err(QpaError::domain(format!("coupling amplitudes carry more than unit power ({power})")));
        }
        if amplitudes.is_empty() {
            return Err(QpaError::domain("need at least one channel"));
        }
        if !(r >= 0.0) {
            return Err(QpaError::domain("squeezing parameter must be >= 0"));
        }
        if !(sampling_rate > 0.0) {
            return Err(QpaError::domain("sampling rate must be positive"));
        }
        let norm = power.sqrt();
        let unit = if norm > 0.0 { amplitudes.iter().map(|c| c / norm).collect() } else { vec![Complex64::default(); amplitudes.len()] };
        let kappa = 1.0 - (1.0 - power.min(1.0)).sqrt();
        Ok(Self {
            amplitudes,
            unit,
            kappa,
            r,
            excess_variance: model.excess_noise_fraction() * SIGMA_VAC,
            sampling_rate,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.amplitudes.len()
    }

    fn check_settings(&self, settings: &ChannelSettings) -> Result<()> {
        if settings.len() != self.n_channels() {
            return Err(QpaError::domain(format!(
                "{} channel settings for {} channels",
                settings.len(),
                self.n_channels()
            )));
        }
        Ok(())
    }

    /// Runs the lockstep generator, handing each block of per-channel samples
    /// (`block[j][i]`) and its starting index to `sink`.
    fn generate<F, S>(&self, settings: &ChannelSettings, lo_phase: F, n: usize, master_seed: u64, mut sink: S)
    where
        F: Fn(usize) -> f64 + Sync,
        S: FnMut(usize, &[Vec<f64>]),
    {
        let nch = self.n_channels();
        let mut src_rng = rng(derive_seed(master_seed, SOURCE_STREAM));
        let mut rngs: Vec<ChaCha8Rng> = (0..nch).map(|j| rng(derive_seed(master_seed, j as u64))).collect();
        let sx = (SIGMA_VAC * (-2.0 * self.r).exp()).sqrt();
        let sp = (SIGMA_VAC * (2.0 * self.r).exp()).sqrt();
        let sv = SIGMA_VAC.sqrt();
        let se = self.excess_variance.sqrt();
        let mut start = 0;
        while start < n {
            let len = BLOCK.min(n - start);
            let source: Vec<Complex64> =
                (0..len).map(|_| Complex64::new(sx * normal(&mut src_rng), sp * normal(&mut src_rng))).collect();
            // (vacuum, excess) per channel and sample
            let draws: Vec<Vec<(Complex64, f64)>> = rngs
                .par_iter_mut()
                .map(|rng| {
                    (0..len)
                        .map(|_| {
                            let v = Complex64::new(sv * normal(rng), sv * normal(rng));
                            (v, se * normal(rng))
                        })
                        .collect()
                })
                .collect();
            let projection: Vec<Complex64> = (0..len)
                .map(|i| (0..nch).fold(Complex64::default(), |acc, k| acc + self.unit[k].conj() * draws[k][i].0))
                .collect();
            let block: Vec<Vec<f64>> = (0..nch)
                .into_par_iter()
                .map(|j| {
                    let (c, u) = (self.amplitudes[j], self.unit[j]);
                    (0..len)
                        .map(|i| {
                            let (v, e) = draws[j][i];
                            let mode = c * source[i] + v - self.kappa * u * projection[i];
                            let rot = Complex64::from_polar(1.0, lo_phase(start + i) + settings.phases[j]);
                            (rot * mode).re + e
                        })
                        .collect()
                })
                .collect();
            sink(start, &block);
            start += len;
        }
    }

    /// Streams lockstep blocks of per-channel samples (`block[j][i]`, first
    /// sample index `start`) without storing whole records. Yields the same
    /// samples as [`Self::sample_channels`].
    pub fn stream_blocks<F, S>(
        &self,
        settings: &ChannelSettings,
        lo_phase: F,
        n: usize,
        master_seed: u64,
        sink: S,
    ) -> Result<()>
    where
        F: Fn(usize) -> f64 + Sync,
        S: FnMut(usize, &[Vec<f64>]),
    {
        self.check_settings(settings)?;
        self.generate(settings, lo_phase, n, master_seed, sink);
        Ok(())
    }

    /// Samples every channel with LO phase `lo_phase(i) + settings.phases[j]`.
    pub fn sample_channels<F>(
        &self,
        settings: &ChannelSettings,
        lo_phase: F,
        n: usize,
        master_seed: u64,
    ) -> Result<Vec<MeasurementRecord>>
    where
        F: Fn(usize) -> f64 + Sync,
    {
        self.check_settings(settings)?;
        let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(n); self.n_channels()];
        self.generate(settings, lo_phase, n, master_seed, |_, block| {
            for (rec, b) in out.iter_mut().zip(block) {
                rec.extend_from_slice(b);
            }
        });
        Ok(out
            .into_iter()
            .enumerate()
            .map(|(j, samples)| MeasurementRecord {
                channel: j,
                samples,
                seed: derive_seed(master_seed, j as u64),
                sampling_rate: self.sampling_rate,
            })
            .collect())
    }

    /// Streams the RF-combined output without storing per-channel records.
    /// Bit-identical to [`combine_records`] applied to [`Self::sample_channels`].
    pub fn sample_combined<F>(
        &self,
        settings: &ChannelSettings,
        lo_phase: F,
        n: usize,
        master_seed: u64,
    ) -> Result<MeasurementRecord>
    where
        F: Fn(usize) -> f64 + Sync,
    {
        self.check_settings(settings)?;
        let norm = combiner_norm(settings)?;
        let mut samples = Vec::with_capacity(n);
        self.generate(settings, lo_phase, n, master_seed, |_, block| {
            let len = block[0].len();
            let mut acc = vec![0.0; len];
            for (b, &g) in block.iter().zip(&settings.gains) {
                if g == 0.0 {
                    continue;
                }
                for (a, x) in acc.iter_mut().zip(b) {
                    *a += g * x;
                }
            }
            samples.extend(acc.into_iter().map(|a| a / norm));
        });
        Ok(MeasurementRecord { channel: 0, samples, seed: master_seed, sampling_rate: self.sampling_rate })
    }

    /// Analytic variance of the combined output at LO phase `theta`.
    pub fn combined_variance(&self, settings: &ChannelSettings, theta: f64) -> Result<f64> {
        self.check_settings(settings)?;
        let norm = combiner_norm(settings)?;
        let field: Complex64 =
            settings.weights().iter().zip(&self.amplitudes).map(|(w, c)| w * c).sum::<Complex64>() / norm;
        let z = field * Complex64::from_polar(1.0, theta);
        let signal = SIGMA_VAC * (z.re * z.re * (-2.0 * self.r).exp() + z.im * z.im * (2.0 * self.r).exp());
        Ok(signal + (1.0 - field.norm_sqr()) * SIGMA_VAC + self.excess_variance)
    }
}

fn combiner_norm(settings: &ChannelSettings) -> Result<f64> {
    let norm = settings.gain_norm_sqr().sqrt();
    if norm == 0.0 {
        return Err(QpaError::domain("all combiner gains are zero"));
    }
    Ok(norm)
}

/// Sample-domain RF combining `Σ g_j X_j / √(Σ g_j²)`.
///
/// Phases act on each channel's LO at acquisition, so only the gains of
/// `settings` are applied here.
pub fn combine_records(records: &[MeasurementRecord], settings: &ChannelSettings) -> Result<MeasurementRecord> {
    if records.len() != settings.len() {
        return Err(QpaError::domain(format!("{} records for {} channel settings", records.len(), settings.len())));
    }
    let norm = combiner_norm(settings)?;
    let n = records[0].len();
    if records.iter().any(|r| r.len() != n) {
        return Err(QpaError::domain("records differ in length"));
    }
    let mut samples = vec![0.0; n];
    for (rec, &g) in records.iter().zip(&settings.gains) {
        if g == 0.0 {
            continue;
        }
        for (acc, x) in samples.iter_mut().zip(&rec.samples) {
            *acc += g * x;
        }
    }
    for x in &mut samples {
        *x /= norm;
    }
    Ok(MeasurementRecord { channel: 0, samples, seed: records[0].seed, sampling_rate: records[0].sampling_rate })
}

/// Covariance-domain RF combining: the single mode `Σ g_j e^{iφ_j} a_j / ‖g‖`.
pub fn combine_modes(state: &GaussianState, settings: &ChannelSettings) -> Result<GaussianState> {
    if state.n_modes() != settings.len() {
        return Err(QpaError::domain(format!(
            "{}-mode state for {} channel settings",
            state.n_modes(),
            settings.len()
        )));
    }
    let norm = combiner_norm(settings)?;
    let row: Vec<Complex64> = settings.weights().iter().map(|w| w / norm).collect();
    let m = nalgebra::DMatrix::from_row_slice(1, row.len(), &row);
    gaussian::apply_linear_network(state, &m)
}

/// Joint state of the pixel modes `a = c s + (I − κ ĉĉ†) v` for a squeezed
/// source `s` (squeezed along LO phase 0); see [`ArraySampler`].
pub fn pixel_state(amplitudes: &[Complex64], r: f64) -> Result<GaussianState> {
    let n = amplitudes.len();
    if n == 0 {
        return Err(QpaError::domain("need at least one pixel"));
    }
    let power: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
    if power > 1.0 + 1e-12 {
        return Err(QpaError::domain(format!("coupling amplitudes carry more than unit power ({power})")));
    }
    let spec = gaussian::SqueezedVacuumSpec::new(r, 0.0)?;
    let input = gaussian::squeezed_vacuum(spec).tensor(&gaussian::vacuum(n)?);
    let kappa = 1.0 - (1.0 - power.min(1.0)).sqrt();
    let mut m = nalgebra::DMatrix::from_element(n, n + 1, Complex64::default());
    for j in 0..n {
        m[(j, 0)] = amplitudes[j];
        m[(j, j + 1)] = Complex64::new(1.0, 0.0);
        if power > 0.0 {
            for k in 0..n {
                m[(j, k + 1)] -= kappa * amplitudes[j] * amplitudes[k].conj() / power;
            }
        }
    }
    gaussian::apply_linear_network(&input, &m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn snc_examples() {
        let m = ReceiverModel::default();
        assert!((snc_curve(&m, 12.5).unwrap() - 3.0103).abs() < 1e-4);
        assert_eq!(snc_curve(&m, 0.0).unwrap(), 0.0);
        let p = (10f64.powf(3.03) - 1.0) * 12.5;
        assert!((p - 13.4e3).abs() < 50.0);
        assert!((snc_curve(&m, p).unwrap() - 30.3).abs() < 1e-12);
        assert!(snc_curve(&m, -1.0).is_err());
        let mut last = -1.0;
        for k in 0..200 {
            let v = snc_curve(&m, k as f64 * 10.0).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn electronic_efficiency_examples() {
        let m = ReceiverModel::default();
        assert!((m.electronic_efficiency() - 0.99907).abs() < 1e-5);
        let quiet = ReceiverModel { snc_db: f64::INFINITY, ..m.clone() };
        assert_eq!(quiet.electronic_efficiency(), 1.0);
        let cv = CouplingVector::new(vec![c(0.0), c(0.5)], 1.0).unwrap();
        assert_eq!(channel_effective_efficiency(&cv, 0, &m, true).unwrap(), 0.0);
        let eta = channel_effective_efficiency(&cv, 1, &m, false).unwrap();
        assert!((eta - 0.25 * m.chain_efficiency(0.0)).abs() < 1e-15);
    }

    #[test]
    fn chain_efficiency_closes_on_chip_budget() {
        let m = ReceiverModel::default();
        // with the antenna loss in the coupling vector the chain carries the
        // rest of the on-chip budget plus the collimator
        let chain_db = -10.0 * m.chain_efficiency(3.78).log10();
        assert!((chain_db - (5.62 - 3.78 + 0.8)).abs() < 1e-12);
    }

    #[test]
    fn identical_seeds_give_identical_streams() {
        let ramp = PhaseRamp { frequency_hz: 1.0, duration_s: 1e-3, sampling_rate: 1e6 };
        let m = ReceiverModel::default();
        let a = homodyne_sample_stream(0.3, 0.7, &ramp, 1000, 42, &m).unwrap();
        let b = homodyne_sample_stream(0.3, 0.7, &ramp, 1000, 42, &m).unwrap();
        let c = homodyne_sample_stream(0.3, 0.7, &ramp, 1000, 43, &m).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn vacuum_stream_variance() {
        let ramp = PhaseRamp { frequency_hz: 0.5, duration_s: 0.05, sampling_rate: 20e6 };
        let m = ReceiverModel::default();
        let n = 1_000_000;
        let rec = homodyne_sample_stream(0.5, 0.0, &ramp, n, 7, &m).unwrap();
        let expected = SIGMA_VAC * (1.0 + 10f64.powf(-3.03));
        let se = expected * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((rec.variance() - expected).abs() < 5.0 * se);
    }

    #[test]
    fn fixed_phase_stream_matches_model_variance() {
        let ramp = PhaseRamp { frequency_hz: 0.0, duration_s: 0.05, sampling_rate: 20e6 };
        let quiet = ReceiverModel { snc_db: f64::INFINITY, ..Default::default() };
        let n = 1_000_000;
        let rec = homodyne_sample_stream(0.021, 0.761, &ramp, n, 11, &quiet).unwrap();
        let rel = 0.021 * (-2.0f64 * 0.761).exp() + 1.0 - 0.021;
        assert!((rel - 0.98358).abs() < 1e-5);
        let expected = SIGMA_VAC * rel;
        let se = expected * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((rec.variance() - expected).abs() < 5.0 * se);
    }

    #[test]
    fn single_channel_combining_is_identity() {
        let ramp = PhaseRamp { frequency_hz: 0.0, duration_s: 1e-3, sampling_rate: 1e6 };
        let rec = homodyne_sample_stream(0.2, 0.3, &ramp, 100, 1, &ReceiverModel::default()).unwrap();
        let other = MeasurementRecord { channel: 1, ..rec.clone() };
        let s = ChannelSettings::new(vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        let out = combine_records(&[rec.clone(), other], &s).unwrap();
        assert_eq!(out.samples, rec.samples);
        let zero = ChannelSettings::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert!(combine_records(&[rec.clone(), rec], &zero).is_err());
    }

    #[test]
    fn combining_vacuum_modes_preserves_vacuum() {
        let v = gaussian::vacuum(2).unwrap();
        let s = ChannelSettings::new(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let out = combine_modes(&v, &s).unwrap();
        assert!((out.cov()[(0, 0)] - SIGMA_VAC).abs() < 1e-15);
        assert!((out.cov()[(1, 1)] - SIGMA_VAC).abs() < 1e-15);
    }

    #[test]
    fn matched_combining_of_pixels_gives_total_efficiency() {
        let amps = [c(0.3), Complex64::from_polar(0.4, 1.1), Complex64::from_polar(0.2, -0.4)];
        let r = 0.9;
        let state = pixel_state(&amps, r).unwrap();
        let s = ChannelSettings::new(amps.iter().map(|a| a.norm()).collect(), amps.iter().map(|a| -a.arg()).collect())
            .unwrap();
        let out = combine_modes(&state, &s).unwrap();
        let eta: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        let var = gaussian::quadrature_variance(&out, &[c(1.0)], 0.0).unwrap();
        assert!((var - gaussian::lossy_squeezed_variance(r, eta, 0.0)).abs() < 1e-14);
    }

    #[test]
    fn streamed_and_batched_combining_agree() {
        let amps = vec![c(0.1), Complex64::from_polar(0.5, 0.3), c(0.2), c(0.05)];
        let m = ReceiverModel::default();
        let sampler = ArraySampler::new(amps, 1.0, &m, 1e6).unwrap();
        let s = ChannelSettings::new(vec![1.0, 2.0, 0.0, 0.5], vec![0.1, -0.3, 0.0, 2.0]).unwrap();
        let ramp = |i: usize| 1e-3 * i as f64;
        let recs = sampler.sample_channels(&s, ramp, 500, 99).unwrap();
        let batched = combine_records(&recs, &s).unwrap();
        let streamed = sampler.sample_combined(&s, ramp, 500, 99).unwrap();
        assert_eq!(batched.samples, streamed.samples);
        let mut blocks = vec![Vec::new(); 4];
        sampler
            .stream_blocks(&s, ramp, 500, 99, |_, b| {
                for (dst, src) in blocks.iter_mut().zip(b) {
                    dst.extend_from_slice(src);
                }
            })
            .unwrap();
        assert!(recs.iter().zip(&blocks).all(|(r, b)| &r.samples == b));
    }

    #[test]
    fn sampler_matches_analytic_combined_variance() {
        let amps: Vec<Complex64> = (0..6).map(|j| Complex64::from_polar(0.2 + 0.03 * j as f64, 0.4 * j as f64)).collect();
        let m = ReceiverModel::default();
        let sampler = ArraySampler::new(amps.clone(), 1.2, &m, 1e6).unwrap();
        let s = ChannelSettings::new(amps.iter().map(|a| a.norm()).collect(), amps.iter().map(|a| -a.arg()).collect())
            .unwrap();
        let n = 400_000;
        for theta in [0.0, 0.7, PI / 2.0] {
            let rec = sampler.sample_combined(&s, |_| theta, n, 5).unwrap();
            let expected = sampler.combined_variance(&s, theta).unwrap();
            let se = expected * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!((rec.variance() - expected).abs() < 5.0 * se, "theta {theta}");
        }
    }

    #[test]
    fn seeds_are_order_independent_and_distinct() {
        let a = derive_seed(1, 0);
        assert_eq!(a, derive_seed(1, 0));
        assert_ne!(a, derive_seed(1, 1));
        assert_ne!(a, derive_seed(2, 0));
        assert_ne!(derive_seed(0, SOURCE_STREAM), derive_seed(0, 0));
    }

    #[test]
    fn binary_round_trip() {
        let rec = MeasurementRecord { channel: 3, samples: vec![0.25, -1.5e-3, 7.0], seed: 9, sampling_rate: 2e7 };
        let mut buf = Vec::new();
        rec.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 24);
        assert_eq!(MeasurementRecord::read_binary(&buf, 3, 9, 2e7).unwrap(), rec);
    }

    #[test]
    fn csv_layout() {
        let rec = MeasurementRecord { channel: 2, samples: vec![0.5, -0.25], seed: 0, sampling_rate: 4.0 };
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &[rec]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time_s,channel,voltage\n0,2,0.5\n0.25,2,-0.25\n");
    }

    #[test]
    fn centered_masks() {
        let m1 = centered_mask(32, 1);
        assert_eq!(m1.iter().position(|&b| b), Some(15));
        let m8 = centered_mask(32, 8);
        assert_eq!(m8.iter().filter(|&&b| b).count(), 8);
        assert!(m8[12] && m8[19] && !m8[11] && !m8[20]);
        assert!(centered_mask(32, 40).iter().all(|&b| b));
    }
}
