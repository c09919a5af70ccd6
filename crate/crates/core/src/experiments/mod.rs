//! Reproducible experiment runners. Each subcommand turns an
//! [`ExperimentConfig`] into a set of CSV artifacts.

pub mod config;
pub mod output;

pub use config::ExperimentConfig;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::aperture::{self, CouplingVector};
use crate::calibration::{self, AngularScan, CalibrationResult};
use crate::cluster::{self, InseparabilityTrace};
use crate::error::{QpaError, Result};
use crate::estimation::{
    self, FitResult, ProfilePoint, PumpPoint, SqueezingEstimate, VarianceSeries, WindowAccumulator,
};
use crate::gaussian::{self, SIGMA_VAC};
use crate::receiver::{self, centered_mask, ArraySampler, ChannelSettings, PhaseRamp, ReceiverModel};
use output::{sig9, CsvTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Imaging,
    ChannelScaling,
    PumpSweep,
    Beamwidth,
    Fov,
    Cluster,
    Calibrate,
    LossBudget,
    SncCurve,
}

impl Subcommand {
    pub const ALL: [Subcommand; 9] = [
        Subcommand::Imaging,
        Subcommand::ChannelScaling,
        Subcommand::PumpSweep,
        Subcommand::Beamwidth,
        Subcommand::Fov,
        Subcommand::Cluster,
        Subcommand::Calibrate,
        Subcommand::LossBudget,
        Subcommand::SncCurve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Imaging => "imaging",
            Subcommand::ChannelScaling => "channel-scaling",
            Subcommand::PumpSweep => "pump-sweep",
            Subcommand::Beamwidth => "beamwidth",
            Subcommand::Fov => "fov",
            Subcommand::Cluster => "cluster",
            Subcommand::Calibrate => "calibrate",
            Subcommand::LossBudget => "loss-budget",
            Subcommand::SncCurve => "snc-curve",
        }
    }

    fn stream(self) -> u64 {
        Self::ALL.iter().position(|s| *s == self).expect("listed") as u64
    }
}

impl std::str::FromStr for Subcommand {
    type Err = QpaError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| QpaError::Config(format!("unknown subcommand '{s}'")))
    }
}

/// A CSV table and its path relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub path: PathBuf,
    pub table: CsvTable,
}

fn artifact(path: impl Into<PathBuf>, table: CsvTable) -> Artifact {
    Artifact { path: path.into(), table }
}

/// Geometric efficiency of `k` centered channels with uniform gains and
/// plant-conjugate phases, for each `k` in `counts`.
pub fn combination_efficiencies(c: &CouplingVector, counts: &[usize]) -> Result<Vec<f64>> {
    counts
        .iter()
        .map(|&k| {
            let settings = aperture::phase_matched_uniform(c, &centered_mask(c.len(), k))?;
            aperture::geometric_efficiency(c, &settings)
        })
        .collect()
}

/// Largest centered-combination efficiency over `k = 1..=N`.
pub fn peak_combination_efficiency(c: &CouplingVector) -> Result<f64> {
    let all: Vec<usize> = (1..=c.len()).collect();
    Ok(combination_efficiencies(c, &all)?.into_iter().fold(0.0, f64::max))
}

/// Source-to-channel amplitudes `c′ √(η_c / η_peak)`: the de-embedded
/// coupling scaled so the best centered combination has efficiency `η_c`.
pub fn source_amplitudes(c: &CouplingVector, eta_c: f64) -> Result<Vec<Complex64>> {
    let peak = peak_combination_efficiency(c)?;
    if !(peak > 0.0) {
        return Err(QpaError::numerical("beam does not couple into the array"));
    }
    let scale = (eta_c / peak).sqrt();
    let amps: Vec<Complex64> = c.deembedded().iter().map(|a| a * scale).collect();
    let power: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    if power > 1.0 {
        return Err(QpaError::domain(format!("eta_c = {eta_c} implies more than unit coupled power ({power})")));
    }
    Ok(amps)
}

/// Single-output squeezing measurement: a ramped squeezed record and a
/// vacuum record through the same receiver, windowed and KDE-estimated.
pub fn squeezing_measurement(
    eta: f64,
    r: f64,
    ramp: &PhaseRamp,
    window: usize,
    model: &ReceiverModel,
    seed: u64,
) -> Result<SqueezingEstimate> {
    let n = ramp.n_samples();
    let sq = receiver::homodyne_sample_stream(eta, r, ramp, n, receiver::derive_seed(seed, 0), model)?;
    let sq = estimation::window_stats(&sq, window)?;
    let vac = receiver::homodyne_sample_stream(0.0, 0.0, ramp, n, receiver::derive_seed(seed, 1), model)?;
    let vac = estimation::window_stats(&vac, window)?;
    estimation::kde_squeezing_estimate(&sq, &vac)
}

/// Efficiency implied by an estimate's level ratio; ratios below one
/// (noise-dominated) map to zero.
pub fn eta_estimate(est: &SqueezingEstimate, r: f64) -> Result<f64> {
    let a = est.ratio();
    if a < 1.0 {
        return Ok(0.0);
    }
    estimation::eta_from_ratio(a, r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScalingRow {
    pub channels: usize,
    pub profile: f64,
    pub eta_model: f64,
    pub estimate: SqueezingEstimate,
    pub eta_estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScalingResult {
    pub rows: Vec<ChannelScalingRow>,
    pub fit: FitResult,
}

impl ChannelScalingResult {
    fn row(&self, k: usize) -> Option<&ChannelScalingRow> {
        self.rows.iter().find(|r| r.channels == k)
    }

    /// Estimated efficiency gain from `from` to `to` combined channels.
    pub fn gain(&self, from: usize, to: usize) -> Option<f64> {
        Some(self.row(to)?.eta_estimate / self.row(from)?.eta_estimate)
    }

    pub fn model_gain(&self, from: usize, to: usize) -> Option<f64> {
        Some(self.row(to)?.eta_model / self.row(from)?.eta_model)
    }
}

pub fn run_channel_scaling(config: &ExperimentConfig, seed: u64) -> Result<ChannelScalingResult> {
    let c = aperture::coupling_vector(&config.geometry, &config.beam)?;
    let peak = peak_combination_efficiency(&c)?;
    let ks = &config.channel_scaling.channels;
    let effs = combination_efficiencies(&c, ks)?;
    let s = &config.source;
    let mut rows = Vec::with_capacity(ks.len());
    for (i, (&k, &eff)) in ks.iter().zip(&effs).enumerate() {
        let profile = eff / peak;
        let eta_model = s.eta_c * profile;
        let estimate = squeezing_measurement(
            eta_model,
            s.r,
            &config.ramp,
            config.estimator.window_size,
            &config.receiver,
            receiver::derive_seed(seed, i as u64),
        )?;
        let eta_estimate = eta_estimate(&estimate, s.r)?;
        rows.push(ChannelScalingRow { channels: k, profile, eta_model, estimate, eta_estimate });
    }
    let data: Vec<ProfilePoint> = rows
        .iter()
        .map(|r| ProfilePoint {
            profile: r.profile,
            squeezing_db: r.estimate.squeezing_db,
            antisqueezing_db: Some(r.estimate.antisqueezing_db),
        })
        .collect();
    let fit = estimation::fit_proportional_eta(&data, (s.r_bounds[0], s.r_bounds[1]))?;
    Ok(ChannelScalingResult { rows, fit })
}

fn channel_scaling_artifacts(config: &ExperimentConfig, seed: u64) -> Result<Vec<Artifact>> {
    let res = run_channel_scaling(config, seed)?;
    let r = config.source.r;
    let mut t = CsvTable::new(&[
        "channels",
        "profile",
        "eta_model",
        "squeezing_model_db",
        "antisqueezing_model_db",
        "squeezing_db",
        "antisqueezing_db",
        "err_db",
        "eta_estimate",
    ]);
    for row in &res.rows {
        t.push_numbers(&[
            row.channels as f64,
            row.profile,
            row.eta_model,
            estimation::model_variance_db(r, row.eta_model, -1.0),
            estimation::model_variance_db(r, row.eta_model, 1.0),
            row.estimate.squeezing_db,
            row.estimate.antisqueezing_db,
            row.estimate.error_db,
            row.eta_estimate,
        ]);
    }
    let mut gain = CsvTable::new(&["from_channels", "to_channels", "model_gain", "estimated_gain"]);
    let ks = &config.channel_scaling.channels;
    let (lo, hi) = (*ks.iter().min().expect("validated"), *ks.iter().max().expect("validated"));
    gain.push_numbers(&[
        lo as f64,
        hi as f64,
        res.model_gain(lo, hi).unwrap_or(f64::NAN),
        res.gain(lo, hi).unwrap_or(f64::NAN),
    ]);
    Ok(vec![
        artifact("channel_scaling.csv", t),
        artifact("channel_scaling_fit.csv", res.fit.table()),
        artifact("channel_scaling_gain.csv", gain),
    ])
}

/// Synthetic pump sweep from the configured `(η, μ)` with Gaussian level
/// noise, and the resulting fit.
pub fn run_pump_sweep(config: &ExperimentConfig, seed: u64) -> Result<(Vec<PumpPoint>, FitResult)> {
    let p = &config.pump_sweep;
    let mut rng = receiver::rng(seed);
    let mut noise = || -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        p.noise_db * z
    };
    let data: Vec<PumpPoint> = p
        .powers_mw
        .iter()
        .map(|&power| {
            let r = p.mu * power.sqrt();
            PumpPoint {
                power_mw: power,
                squeezing_db: estimation::model_variance_db(r, p.eta, -1.0) + noise(),
                antisqueezing_db: estimation::model_variance_db(r, p.eta, 1.0) + noise(),
            }
        })
        .collect();
    let fit = estimation::fit_pump_sweep(&data)?;
    Ok((data, fit))
}

fn pump_sweep_artifacts(config: &ExperimentConfig, seed: u64) -> Result<Vec<Artifact>> {
    let (data, fit) = run_pump_sweep(config, seed)?;
    let (eta, mu) = (fit.get("eta").expect("fit names"), fit.get("mu").expect("fit names"));
    let mut t = CsvTable::new(&["power_mw", "squeezing_db", "antisqueezing_db", "squeezing_fit_db", "antisqueezing_fit_db"]);
    for d in &data {
        let r = mu * d.power_mw.sqrt();
        t.push_numbers(&[
            d.power_mw,
            d.squeezing_db,
            d.antisqueezing_db,
            estimation::model_variance_db(r, eta, -1.0),
            estimation::model_variance_db(r, eta, 1.0),
        ]);
    }
    Ok(vec![artifact("pump_sweep.csv", t), artifact("pump_sweep_fit.csv", fit.table())])
}

fn with_models(scan: &AngularScan, eta_scale: f64, r: f64) -> CsvTable {
    let mut t = CsvTable::new(&["theta_deg", "efficiency", "normalized", "squeezing_model_db", "antisqueezing_model_db"]);
    for i in 0..scan.angles_deg.len() {
        let eta = (eta_scale * scan.efficiency[i]).min(1.0);
        t.push_numbers(&[
            scan.angles_deg[i],
            scan.efficiency[i],
            scan.normalized[i],
            estimation::model_variance_db(r, eta, -1.0),
            estimation::model_variance_db(r, eta, 1.0),
        ]);
    }
    t
}

/// Fixed broadside beamforming on `k` centered channels, scanned in angle.
pub fn run_beamwidth(config: &ExperimentConfig) -> Result<Vec<(usize, AngularScan)>> {
    let c = aperture::coupling_vector(&config.geometry, &config.beam)?;
    let sc = &config.scan;
    let angles = calibration::angle_grid(-sc.beamwidth_half_range_deg, sc.beamwidth_half_range_deg, sc.beamwidth_points);
    sc.channels
        .iter()
        .map(|&k| {
            let settings = aperture::phase_matched_uniform(&c, &centered_mask(c.len(), k))?;
            Ok((k, calibration::beamwidth_scan(&config.geometry, &config.beam, &settings, &angles)?))
        })
        .collect()
}

/// Recalibrated efficiency versus angle on `k` centered channels.
pub fn run_fov(config: &ExperimentConfig, seed: u64) -> Result<Vec<(usize, AngularScan)>> {
    let sc = &config.scan;
    let angles = calibration::angle_grid(-sc.fov_half_range_deg, sc.fov_half_range_deg, sc.fov_points);
    sc.channels
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let scan = calibration::fov_scan(
                &config.geometry,
                &config.beam,
                &centered_mask(config.geometry.n_antennas, k),
                &angles,
                &config.calibration,
                &config.actuator,
                receiver::derive_seed(seed, i as u64),
            )?;
            Ok((k, scan))
        })
        .collect()
}

fn angular_artifacts(config: &ExperimentConfig, scans: &[(usize, AngularScan)], stem: &str, label: &str) -> Result<Vec<Artifact>> {
    let c = aperture::coupling_vector(&config.geometry, &config.beam)?;
    let eta_scale = config.source.eta_c / peak_combination_efficiency(&c)?;
    let mut summary = CsvTable::new(&["channels", label]);
    let mut out = Vec::new();
    for (k, scan) in scans {
        summary.push_numbers(&[*k as f64, scan.width(config.scan.level)?]);
        out.push(artifact(format!("{stem}_{k}ch.csv"), with_models(scan, eta_scale, config.source.r)));
    }
    out.push(artifact(format!("{stem}_summary.csv"), summary));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Efficiencies of the two combiner outputs.
    pub eta_halves: [f64; 2],
    pub analytic_theta: Vec<f64>,
    pub analytic: Vec<f64>,
    pub trace: InseparabilityTrace,
}

/// Pixel amplitudes and beamformed phases of the cluster configuration.
pub fn cluster_pixels(config: &ExperimentConfig) -> Result<(Vec<Complex64>, Vec<f64>)> {
    let c = aperture::coupling_vector(&config.geometry, &config.beam)?;
    let all = source_amplitudes(&c, config.source.eta_c)?;
    let amps: Vec<Complex64> = config.cluster.pixel_channels.iter().map(|&j| all[j]).collect();
    let phases = amps.iter().map(|a| (-a.arg()).rem_euclid(2.0 * PI)).collect();
    Ok((amps, phases))
}

/// Analytic inseparability of the configured cluster at LO phase `theta`.
pub fn cluster_inseparability(config: &ExperimentConfig, theta: f64) -> Result<f64> {
    let (amps, phases) = cluster_pixels(config)?;
    let pair = cluster::power_combine_halves(&receiver::pixel_state(&amps, config.source.r)?, &phases, &config.cluster)?;
    cluster::inseparability(&cluster::emulated_beamsplitter(&pair)?, theta)
}

pub fn run_cluster(config: &ExperimentConfig, seed: u64) -> Result<ClusterResult> {
    let cc = &config.cluster;
    let r = config.source.r;
    let (amps, phases) = cluster_pixels(config)?;
    let state = receiver::pixel_state(&amps, r)?;
    let pair = cluster::power_combine_halves(&state, &phases, cc)?;
    let out = cluster::emulated_beamsplitter(&pair)?;
    let one = [Complex64::new(1.0, 0.0), Complex64::default()];
    let two = [Complex64::default(), Complex64::new(1.0, 0.0)];
    let vac = |w: &[Complex64]| -> Result<f64> {
        let v = gaussian::quadrature_variance(&pair, w, 0.0)?;
        Ok((1.0 - v / SIGMA_VAC) / (1.0 - (-2.0 * r).exp()))
    };
    let eta_halves = if r > 0.0 { [vac(&one)?, vac(&two)?] } else { [0.0, 0.0] };
    let analytic_theta: Vec<f64> = (0..=180).map(|k| 2.0 * PI * k as f64 / 180.0).collect();
    let analytic = analytic_theta
        .iter()
        .map(|&t| cluster::inseparability(&out, t))
        .collect::<Result<Vec<_>>>()?;

    let ramp = cc.ramp();
    let n = ramp.n_samples();
    let sampler = ArraySampler::new(amps, r, &config.receiver, ramp.sampling_rate)?;
    let settings = ChannelSettings::new(vec![1.0; phases.len()], phases)?;
    let rows = cc.row_settings(&settings.phases)?;
    let norms: Vec<f64> = rows.iter().map(|s| s.gain_norm_sqr().sqrt()).collect();
    let mut halves = [Vec::with_capacity(n), Vec::with_capacity(n)];
    sampler.stream_blocks(&settings, cluster::interleaved_lo_phase(&ramp, cc.segment_len), n, seed, |_, block| {
        for (h, row) in rows.iter().enumerate() {
            let len = block[0].len();
            let mut acc = vec![0.0; len];
            for (b, &g) in block.iter().zip(&row.gains) {
                if g != 0.0 {
                    for (a, x) in acc.iter_mut().zip(b) {
                        *a += g * x;
                    }
                }
            }
            halves[h].extend(acc.into_iter().map(|a| a / norms[h]));
        }
    })?;
    let [h1, h2] = halves;
    let record = |samples, channel| receiver::MeasurementRecord { channel, samples, seed, sampling_rate: ramp.sampling_rate };
    let q1 = cluster::interleaved_quadratures(&record(h1, 0), cc.segment_len)?;
    let q2 = cluster::interleaved_quadratures(&record(h2, 1), cc.segment_len)?;
    let (m3, m4) = cluster::emulated_beamsplitter_samples(&q1, &q2)?;
    let vacuum = SIGMA_VAC * (1.0 + config.receiver.excess_noise_fraction());
    let window = cc.window_size;
    let trace = cluster::inseparability_samples(
        &m3,
        &m4,
        vacuum,
        window,
        cc.bootstrap_blocks,
        cc.bootstrap_resamples,
        receiver::derive_seed(seed, receiver::SOURCE_STREAM - 1),
        // pair index p sits at sample 2·seg·(p / seg) + p % seg, so a window
        // of pairs spans twice as many samples
        |w| ramp.phase_at((2 * w + 1) * window),
    )?;
    Ok(ClusterResult { eta_halves, analytic_theta, analytic, trace })
}

fn cluster_artifacts(config: &ExperimentConfig, seed: u64) -> Result<Vec<Artifact>> {
    let res = run_cluster(config, seed)?;
    let mut analytic = CsvTable::new(&["theta_rad", "I"]);
    for (t, i) in res.analytic_theta.iter().zip(&res.analytic) {
        analytic.push_numbers(&[*t, *i]);
    }
    let mut halves = CsvTable::new(&["output", "eta"]);
    for (k, e) in res.eta_halves.iter().enumerate() {
        halves.push_numbers(&[(k + 1) as f64, *e]);
    }
    Ok(vec![
        artifact("cluster.csv", res.trace.table()),
        artifact("cluster_analytic.csv", analytic),
        artifact("cluster_outputs.csv", halves),
    ])
}

/// Calibration of all channels against the configured plant with random LO
/// path offsets, and the matched optimum it should approach.
pub fn run_calibrate(config: &ExperimentConfig, seed: u64) -> Result<(CalibrationResult, f64, f64)> {
    let c = aperture::coupling_vector(&config.geometry, &config.beam)?;
    let plant = calibration::with_random_lo_offsets(&c, receiver::derive_seed(seed, 0))?;
    let active = vec![true; plant.len()];
    let res = calibration::calibrate_phases(&config.calibration, &config.actuator, &plant, &active, receiver::derive_seed(seed, 1))?;
    let optimum = calibration::classical_feedback(&aperture::phase_matched_uniform(&plant, &active)?, plant.amplitudes());
    let reached = calibration::classical_feedback(&res.settings, plant.amplitudes());
    Ok((res, reached, optimum))
}

fn calibrate_artifacts(config: &ExperimentConfig, seed: u64) -> Result<Vec<Artifact>> {
    let (res, reached, optimum) = run_calibrate(config, seed)?;
    let mut settings = CsvTable::new(&["channel", "gain", "phase_rad", "voltage"]);
    let volts = res.settings.tops_voltages.clone().unwrap_or_default();
    for j in 0..res.settings.len() {
        settings.push_numbers(&[j as f64, res.settings.gains[j], res.settings.phases[j], volts.get(j).copied().unwrap_or(f64::NAN)]);
    }
    let mut summary = CsvTable::new(&["feedback", "optimum", "fraction"]);
    summary.push_numbers(&[reached, optimum, reached / optimum]);
    Ok(vec![
        artifact("calibration_trace.csv", res.trace_table()),
        artifact("calibration_settings.csv", settings),
        artifact("calibration_summary.csv", summary),
    ])
}

fn loss_budget_artifacts(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let lb = &config.loss_budget;
    let parts: Vec<(&str, f64)> = lb.components.iter().map(|c| (c.name.as_str(), c.db)).collect();
    let total = estimation::loss_budget(&parts)?;
    let residual = estimation::de_embed(lb.measured_total_db, &lb.known_db)?;
    let mut t = CsvTable::new(&["item", "db"]);
    for (name, db) in &parts {
        t.push(vec![name.to_string(), sig9(*db)]);
    }
    t.push(vec!["expected on-chip total".into(), sig9(total)]);
    t.push(vec!["measured insertion".into(), sig9(lb.measured_total_db)]);
    for (k, db) in lb.known_db.iter().enumerate() {
        t.push(vec![format!("known {}", k + 1), sig9(*db)]);
    }
    t.push(vec!["de-embedded on-chip".into(), sig9(residual)]);
    Ok(vec![artifact("loss_budget.csv", t)])
}

fn snc_artifacts(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let s = &config.snc;
    let mut t = CsvTable::new(&["lo_power_uw", "snc_db"]);
    let ratio = (s.max_uw / s.min_uw).ln();
    for k in 0..s.points {
        let p = s.min_uw * (ratio * k as f64 / (s.points - 1) as f64).exp();
        t.push_numbers(&[p, receiver::snc_curve(&config.receiver, p)?]);
    }
    Ok(vec![artifact("snc_curve.csv", t)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagingResult {
    pub squeezed: Vec<VarianceSeries>,
    pub vacuum: Vec<VarianceSeries>,
    pub estimates: Vec<SqueezingEstimate>,
    pub eta: Vec<f64>,
    pub fractions: Vec<f64>,
    pub model_fractions: Vec<f64>,
}

fn stream_window_stats(sampler: &ArraySampler, ramp: &PhaseRamp, window: usize, seed: u64) -> Result<Vec<VarianceSeries>> {
    let n = sampler.n_channels();
    let mut accs = (0..n).map(|_| WindowAccumulator::new(window, ramp.sampling_rate)).collect::<Result<Vec<_>>>()?;
    let settings = ChannelSettings::from_mask(&vec![true; n]);
    sampler.stream_blocks(&settings, |i| ramp.phase_at(i), ramp.n_samples(), seed, |_, block| {
        for (acc, b) in accs.iter_mut().zip(block) {
            acc.push(b);
        }
    })?;
    accs.into_iter().map(WindowAccumulator::finish).collect()
}

/// Every channel measured separately, with a simultaneous vacuum reference
/// per channel; per-channel efficiencies normalized into the pixel profile.
pub fn run_imaging(config: &ExperimentConfig, seed: u64) -> Result<ImagingResult> {
    let c = aperture::coupling_vector(&config.geometry, &config.beam)?;
    let amps = source_amplitudes(&c, config.source.eta_c)?;
    let r = config.source.r;
    let window = config.estimator.window_size;
    let rate = config.ramp.sampling_rate;
    let squeezed = stream_window_stats(&ArraySampler::new(amps.clone(), r, &config.receiver, rate)?, &config.ramp, window, receiver::derive_seed(seed, 0))?;
    let vacuum = stream_window_stats(&ArraySampler::new(amps.clone(), 0.0, &config.receiver, rate)?, &config.ramp, window, receiver::derive_seed(seed, 1))?;
    let estimates = squeezed
        .iter()
        .zip(&vacuum)
        .map(|(s, v)| estimation::kde_squeezing_estimate(s, v))
        .collect::<Result<Vec<_>>>()?;
    let eta = estimates.iter().map(|e| eta_estimate(e, r)).collect::<Result<Vec<_>>>()?;
    let fractions = estimation::pixel_geometric_efficiencies(&eta)
        .map_err(|e| QpaError::numerical(format!("no channel shows squeezing: {e}")))?;
    let model_fractions = estimation::pixel_geometric_efficiencies(&amps.iter().map(|a| a.norm_sqr()).collect::<Vec<_>>())?;
    Ok(ImagingResult { squeezed, vacuum, estimates, eta, fractions, model_fractions })
}

fn series_table(series: &[VarianceSeries]) -> CsvTable {
    let mut t = CsvTable::new(&["channel", "window", "time_s", "mean", "variance"]);
    for (j, s) in series.iter().enumerate() {
        for k in 0..s.len() {
            t.push_numbers(&[j as f64, k as f64, s.timestamps[k], s.means[k], s.variances[k]]);
        }
    }
    t
}

fn imaging_artifacts(config: &ExperimentConfig, seed: u64) -> Result<Vec<Artifact>> {
    let res = run_imaging(config, seed)?;
    let mut pixels = CsvTable::new(&[
        "channel",
        "squeezing_db",
        "antisqueezing_db",
        "err_db",
        "eta",
        "geometric_fraction",
        "model_fraction",
    ]);
    for (j, e) in res.estimates.iter().enumerate() {
        pixels.push_numbers(&[
            j as f64,
            e.squeezing_db,
            e.antisqueezing_db,
            e.error_db,
            res.eta[j],
            res.fractions[j],
            res.model_fractions[j],
        ]);
    }
    let mut out = vec![
        artifact("imaging_variance.csv", series_table(&res.squeezed)),
        artifact("imaging_vacuum.csv", series_table(&res.vacuum)),
        artifact("imaging_pixels.csv", pixels),
    ];
    let im = &config.imaging;
    let half = im.wigner_extent * SIGMA_VAC.sqrt();
    let axis: Vec<f64> = (0..im.wigner_points)
        .map(|k| -half + 2.0 * half * k as f64 / (im.wigner_points - 1) as f64)
        .collect();
    for (j, &eta) in res.eta.iter().enumerate() {
        let mut t = CsvTable::new(&["x", "p", "w"]);
        for &x in &axis {
            for &p in &axis {
                t.push_numbers(&[x, p, gaussian::wigner_density(config.source.r, 0.0, eta.min(1.0), x, p)?]);
            }
        }
        out.push(artifact(format!("wigner/pixel_{j:02}.csv"), t));
    }
    Ok(out)
}

/// Runs `sub` and returns its artifacts, each stamped with the config hash
/// and master seed.
pub fn run_subcommand(sub: Subcommand, config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    config.validate()?;
    let seed = receiver::derive_seed(config.master_seed, sub.stream());
    let mut artifacts = match sub {
        Subcommand::Imaging => imaging_artifacts(config, seed)?,
        Subcommand::ChannelScaling => channel_scaling_artifacts(config, seed)?,
        Subcommand::PumpSweep => pump_sweep_artifacts(config, seed)?,
        Subcommand::Beamwidth => angular_artifacts(config, &run_beamwidth(config)?, "beamwidth", "width_deg")?,
        Subcommand::Fov => angular_artifacts(config, &run_fov(config, seed)?, "fov", "fov_deg")?,
        Subcommand::Cluster => cluster_artifacts(config, seed)?,
        Subcommand::Calibrate => calibrate_artifacts(config, seed)?,
        Subcommand::LossBudget => loss_budget_artifacts(config)?,
        Subcommand::SncCurve => snc_artifacts(config)?,
    };
    let stamp = format!("config_hash={}, seed={}", config.hash(), config.master_seed);
    for a in &mut artifacts {
        a.table.comment = Some(stamp.clone());
    }
    Ok(artifacts)
}

/// Writes artifacts and the resolved configuration under `dir`.
pub fn write_artifacts(dir: &Path, config: &ExperimentConfig, artifacts: &[Artifact]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(artifacts.len() + 1);
    let resolved = dir.join("config.resolved.toml");
    std::fs::write(&resolved, config.to_toml())?;
    written.push(resolved);
    for a in artifacts {
        let path = dir.join(&a.path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        a.table.write(file)?;
        written.push(path);
    }
    Ok(written)
}

pub fn run(sub: Subcommand, config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let artifacts = run_subcommand(sub, config)?;
    write_artifacts(&config.output_dir, config, &artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let sets: Vec<String> = [
            "ramp.duration_s=0.05",
            "ramp.frequency_hz=40",
            "ramp.sampling_rate=2e6",
            "estimator.window_size=1000",
            "channel_scaling.channels=[1, 8]",
            "scan.beamwidth_points=41",
            "scan.fov_points=21",
            "cluster.duration_s=0.1",
            "cluster.decimation=100",
            "cluster.segment_len=100",
            "cluster.window_size=2000",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        ExperimentConfig::from_toml_with_overrides("", &sets).unwrap()
    }

    #[test]
    fn subcommand_names_round_trip() {
        for s in Subcommand::ALL {
            assert_eq!(s.name().parse::<Subcommand>().unwrap(), s);
        }
        assert!(matches!("nope".parse::<Subcommand>(), Err(QpaError::Config(_))));
    }

    #[test]
    fn source_amplitudes_put_eta_c_on_the_best_combination() {
        let config = ExperimentConfig::default();
        let c = aperture::coupling_vector(&config.geometry, &config.beam).unwrap();
        let amps = source_amplitudes(&c, 0.021).unwrap();
        let best = (1..=32)
            .map(|k| {
                let s = aperture::phase_matched_uniform(&c, &centered_mask(32, k)).unwrap();
                aperture::combined_efficiency(&amps, &s).unwrap()
            })
            .fold(0.0, f64::max);
        assert!((best - 0.021).abs() < 1e-15);
        assert!(source_amplitudes(&c, 1e6).is_err());
    }

    #[test]
    fn loss_budget_rows() {
        let a = run_subcommand(Subcommand::LossBudget, &ExperimentConfig::default()).unwrap();
        let text = a[0].table.to_string_lossy();
        assert!(text.contains("expected on-chip total,5.621\n"), "{text}");
        assert!(text.contains("de-embedded on-chip,5.72\n"), "{text}");
        assert!(text.starts_with("# config_hash="));
    }

    #[test]
    fn every_subcommand_is_deterministic() {
        let config = small();
        for sub in Subcommand::ALL {
            if sub == Subcommand::Imaging {
                continue;
            }
            let a = run_subcommand(sub, &config).unwrap();
            let b = run_subcommand(sub, &config).unwrap();
            assert_eq!(a, b, "{}", sub.name());
            assert!(!a.is_empty());
        }
    }

    #[test]
    fn imaging_recovers_the_pixel_profile_at_high_efficiency() {
        let mut config = small();
        config.source.eta_c = 0.9;
        config.source.r = 1.0;
        config.geometry.n_antennas = 8;
        config.ramp.duration_s = 0.1;
        let res = run_imaging(&config, 4).unwrap();
        assert_eq!(res.squeezed.len(), 8);
        let sum: f64 = res.fractions.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for (f, m) in res.fractions.iter().zip(&res.model_fractions) {
            assert!((f - m).abs() < 0.25 * m + 0.01, "{f} vs {m}");
        }
    }

    #[test]
    fn cluster_trace_dips_below_vacuum() {
        let mut config = small();
        config.source.eta_c = 0.5;
        config.source.r = 1.0;
        let res = run_cluster(&config, 2).unwrap();
        let min = res.analytic.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = res.analytic.iter().cloned().fold(0.0, f64::max);
        assert!(min < 1.0 && max > 1.0);
        assert!((min - cluster_inseparability(&config, 0.0).unwrap()).abs() < 1e-12);
        assert!(res.trace.value.len() >= 10);
        assert!(res.trace.error.iter().all(|e| *e > 0.0));
    }

    #[test]
    fn written_artifacts_are_stamped() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig { output_dir: dir.path().to_path_buf(), ..small() };
        let paths = run(Subcommand::SncCurve, &config).unwrap();
        assert_eq!(paths.len(), 2);
        let resolved = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(ExperimentConfig::from_toml_with_overrides(&resolved, &[]).unwrap(), config);
        let csv = std::fs::read_to_string(&paths[1]).unwrap();
        assert!(csv.starts_with(&format!("# config_hash={}, seed=1\nlo_power_uw,snc_db\n", config.hash())));
    }
}
