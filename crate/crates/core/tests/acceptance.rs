//! Acceptance suite: every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line. Failures make the process exit non-zero only when
//! `QPA_ACCEPTANCE_STRICT=1` is set; positional arguments filter criteria by
//! name.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use qpa_core::aperture::{self, ApertureGeometry, BeamSpec};
use qpa_core::calibration::{self, ActuatorModel, CalibrationConfig};
use qpa_core::cluster::{self, ClusterPipelineConfig};
use qpa_core::estimation::{self, window_stats};
use qpa_core::experiments::{self, ExperimentConfig, Subcommand};
use qpa_core::gaussian::{self, SqueezedVacuumSpec, SIGMA_VAC};
use qpa_core::receiver::{self, centered_mask, ArraySampler, ChannelSettings, PhaseRamp, ReceiverModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

/// Lossy squeezed variance written out directly from the squeezing formula.
fn eq2(r: f64, eta: f64, theta: f64) -> f64 {
    let (c, s) = (theta.cos(), theta.sin());
    SIGMA_VAC * (eta * ((-2.0 * r).exp() * c * c + (2.0 * r).exp() * s * s) + 1.0 - eta)
}

fn closed_form_agreement() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..=40 {
        let r = 2.0 * i as f64 / 40.0;
        let squeezed = gaussian::squeezed_vacuum(SqueezedVacuumSpec::new(r, 0.0).unwrap());
        for k in 0..=20 {
            let eta = k as f64 / 20.0;
            let lossy = gaussian::apply_loss(&squeezed, 0, eta).unwrap();
            for m in 0..=36 {
                let theta = PI * m as f64 / 36.0;
                let v = gaussian::quadrature_variance(&lossy, &[Complex64::new(1.0, 0.0)], theta).unwrap();
                let expected = eq2(r, eta, theta);
                worst = worst.max((v - expected).abs() / expected);
            }
        }
    }
    outcome(worst < 1e-12, format!("max relative deviation {worst:.2e} over 41x21x37 (r, eta, theta) grid"))
}

fn efficiency_inversion() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 1..=100 {
        let eta = i as f64 / 100.0;
        for k in 1..=100 {
            let r = 2.0 * k as f64 / 100.0;
            let a = estimation::model_variance(r, eta, 1.0) / estimation::model_variance(r, eta, -1.0);
            worst = worst.max((estimation::eta_from_ratio(a, r).unwrap() - eta).abs());
        }
    }
    outcome(worst < 1e-10, format!("max round-trip error {worst:.2e} over 100x100 (eta, r) grid"))
}

fn geometric_losses() -> Outcome {
    let g = ApertureGeometry::default();
    let c = aperture::coupling_vector(&g, &BeamSpec::default()).unwrap();
    let loss = |k: usize| {
        let s = aperture::phase_matched_uniform(&c, &centered_mask(32, k)).unwrap();
        aperture::geometric_loss(&c, &s).unwrap()
    };
    let matched = aperture::geometric_loss(&c, &aperture::matched_settings(&c, &[true; 32]).unwrap()).unwrap();
    let (l32, l8) = (loss(32), loss(8));
    let pass = within(l32, 4.50, 0.6) && within(l8, 2.03, 0.4) && within(matched, 1.35, 0.4);
    outcome(pass, format!("32ch uniform {l32:.3} dB, 8ch uniform {l8:.3} dB, amplitude-weighted {matched:.3} dB"))
}

fn beamforming_optimality() -> Outcome {
    let c = aperture::coupling_vector(&ApertureGeometry::default(), &BeamSpec::default()).unwrap();
    let best = aperture::geometric_efficiency(&c, &aperture::matched_settings(&c, &[true; 32]).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut highest: f64 = 0.0;
    for _ in 0..1000 {
        let gains = (0..32).map(|_| rng.random_range(0.0..1.0)).collect();
        let phases = (0..32).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let s = ChannelSettings::new(gains, phases).unwrap();
        highest = highest.max(aperture::geometric_efficiency(&c, &s).unwrap());
    }
    outcome(highest <= best * (1.0 + 1e-12), format!("best random {highest:.4e} <= matched {best:.4e}"))
}

fn calibration_trials() -> Outcome {
    let c = aperture::coupling_vector(&ApertureGeometry::default(), &BeamSpec::default()).unwrap();
    let active = [true; 32];
    let mut worst = f64::INFINITY;
    let mut monotone = true;
    for trial in 0..50u64 {
        let plant = calibration::with_random_lo_offsets(&c, receiver::derive_seed(77, 2 * trial)).unwrap();
        let res = calibration::calibrate_phases(
            &CalibrationConfig::default(),
            &ActuatorModel::default(),
            &plant,
            &active,
            receiver::derive_seed(77, 2 * trial + 1),
        )
        .unwrap();
        let optimum = calibration::classical_feedback(&aperture::phase_matched_uniform(&plant, &active).unwrap(), plant.amplitudes());
        let reached = calibration::classical_feedback(&res.settings, plant.amplitudes());
        worst = worst.min(reached / optimum);
        monotone &= res.trace.windows(2).all(|w| w[1].feedback >= w[0].feedback * (1.0 - 1e-12));
    }
    outcome(worst >= 0.99 && monotone, format!("worst of 50 trials {:.4}% of optimum, traces non-decreasing: {monotone}", 100.0 * worst))
}

fn channel_scaling() -> Outcome {
    let config = ExperimentConfig {
        channel_scaling: experiments::config::ChannelScalingConfig { channels: vec![1, 8] },
        ..ExperimentConfig::default()
    };
    let res = experiments::run_channel_scaling(&config, 2024).unwrap();
    let (one, eight) = (&res.rows[0], &res.rows[1]);
    let gain = res.gain(1, 8).unwrap();
    let pass = within(one.estimate.squeezing_db, -0.017, 0.012)
        && within(eight.estimate.squeezing_db, -0.064, 0.02)
        && within(gain, 4.5, 0.2 * 4.5);
    outcome(
        pass,
        format!(
            "1ch {:.4} dB, 8ch {:.4} dB (err {:.4} dB); extracted gain {gain:.3} (model {:.3})",
            one.estimate.squeezing_db,
            eight.estimate.squeezing_db,
            one.estimate.error_db,
            res.model_gain(1, 8).unwrap()
        ),
    )
}

fn pump_sweep() -> Outcome {
    let config = ExperimentConfig::default();
    let (_, fit) = experiments::run_pump_sweep(&config, 7).unwrap();
    let (eta, mu) = (fit.get("eta").unwrap(), fit.get("mu").unwrap());
    let pass = within(eta, 0.016, 0.05 * 0.016) && within(mu, 0.038, 0.05 * 0.038);
    outcome(pass, format!("eta {eta:.5}, mu {mu:.5} mW^-1/2 from 0.012 dB level noise"))
}

fn beamwidth() -> Outcome {
    let scans = experiments::run_beamwidth(&ExperimentConfig::default()).unwrap();
    let width = |k: usize| scans.iter().find(|(n, _)| *n == k).unwrap().1.width(0.5).unwrap();
    let (w8, w32) = (width(8), width(32));
    let ratio = w32 / w8;
    let pass = within(w8, 0.41, 0.3 * 0.41) && within(w32, 0.20, 0.3 * 0.20) && within(ratio, 0.49, 0.15);
    outcome(pass, format!("8ch {w8:.3} deg, 32ch {w32:.3} deg, ratio {ratio:.3}"))
}

fn field_of_view() -> Outcome {
    let config = ExperimentConfig::default();
    let scans = experiments::run_fov(&config, 5).unwrap();
    let widths: Vec<(usize, f64)> = scans.iter().map(|(k, s)| (*k, s.width(0.5).unwrap())).collect();
    let pass = widths.iter().all(|(_, w)| *w >= 2.3 * 0.8 && *w <= 2.7 * 1.2);
    let text = widths.iter().map(|(k, w)| format!("{k}ch {w:.3} deg")).collect::<Vec<_>>().join(", ");
    outcome(pass, format!("{text} (element FWHM {} deg)", config.geometry.element_pattern_fwhm_deg))
}

fn cluster_state() -> Outcome {
    let config = ExperimentConfig::default();
    let thetas: Vec<f64> = (0..=720).map(|k| 2.0 * PI * k as f64 / 720.0).collect();
    let curve: Vec<f64> = thetas.iter().map(|&t| experiments::cluster_inseparability(&config, t).unwrap()).collect();
    let i_min = curve.iter().cloned().fold(f64::INFINITY, f64::min);

    // sample path: fixed LO phase, 10^7 samples
    let (amps, phases) = experiments::cluster_pixels(&config).unwrap();
    let cc = ClusterPipelineConfig { ramp_frequency_hz: 0.0, decimation: 10, duration_s: 1.0, ..config.cluster.clone() };
    let ramp = cc.ramp();
    let n = ramp.n_samples();
    let sampler = ArraySampler::new(amps.clone(), config.source.r, &config.receiver, ramp.sampling_rate).unwrap();
    let settings = ChannelSettings::new(vec![1.0; 8], phases.clone()).unwrap();
    let mut halves = [Vec::with_capacity(n), Vec::with_capacity(n)];
    sampler
        .stream_blocks(&settings, cluster::interleaved_lo_phase(&ramp, cc.segment_len), n, 31, |_, block| {
            for (h, half) in halves.iter_mut().enumerate() {
                let len = block[0].len();
                half.extend((0..len).map(|i| (4 * h..4 * h + 4).map(|j| block[j][i]).sum::<f64>() / 2.0));
            }
        })
        .unwrap();
    let [h1, h2] = halves;
    let rec = |samples| receiver::MeasurementRecord { channel: 0, samples, seed: 31, sampling_rate: ramp.sampling_rate };
    let q1 = cluster::interleaved_quadratures(&rec(h1), cc.segment_len).unwrap();
    let q2 = cluster::interleaved_quadratures(&rec(h2), cc.segment_len).unwrap();
    let (m3, m4) = cluster::emulated_beamsplitter_samples(&q1, &q2).unwrap();
    let vacuum = SIGMA_VAC * (1.0 + config.receiver.excess_noise_fraction());
    let trace = cluster::inseparability_samples(&m3, &m4, vacuum, m3.len(), 20, 200, 8, |_| 0.0).unwrap();
    let (i_s, se) = (trace.value[0], trace.error[0]);
    let i_0 = experiments::cluster_inseparability(&config, 0.0).unwrap();
    let sample_ok = (i_s - i_0).abs() <= 5.0 * se;

    let vac = cluster::inseparability(&cluster::emulated_beamsplitter(&gaussian::vacuum(2).unwrap()).unwrap(), 0.3).unwrap();
    let no_source = ExperimentConfig { source: experiments::config::SourceConfig { r: 0.0, ..config.source.clone() }, ..config.clone() };
    let vac_pipeline = experiments::cluster_inseparability(&no_source, 0.3).unwrap();

    let mut floor = f64::INFINITY;
    for i in 0..=30 {
        let r = 3.0 * i as f64 / 30.0;
        for a in 0..=20 {
            for b in 0..=(20 - a) {
                let (e1, e2) = (a as f64 / 20.0, b as f64 / 20.0);
                for m in 0..=12 {
                    floor = floor.min(cluster::inseparability_closed_form(r, e1, e2, PI * m as f64 / 12.0));
                }
            }
        }
    }
    let pass = within(i_min, 0.994, 0.004) && sample_ok && vac == 1.0 && (vac_pipeline - 1.0).abs() < 1e-12 && floor >= 0.5 - 1e-12;
    outcome(
        pass,
        format!(
            "analytic min I {i_min:.5}; sample I {i_s:.5} +/- {se:.5} vs {i_0:.5} at 1e7 samples; vacuum I = {vac}; grid floor {floor:.4}"
        ),
    )
}

fn kde_estimator() -> Outcome {
    let model = ReceiverModel::default();
    let eps = model.excess_noise_fraction();
    let ramp = PhaseRamp { frequency_hz: 5.0, duration_s: 0.25, sampling_rate: 20e6 };
    let window = 20_000;
    let n = ramp.n_samples();
    let estimate = |eta: f64, r: f64, seed: u64| {
        let sq = receiver::homodyne_sample_stream(eta, r, &ramp, n, receiver::derive_seed(seed, 0), &model).unwrap();
        let vac = receiver::homodyne_sample_stream(0.0, 0.0, &ramp, n, receiver::derive_seed(seed, 1), &model).unwrap();
        estimation::kde_squeezing_estimate(&window_stats(&sq, window).unwrap(), &window_stats(&vac, window).unwrap()).unwrap()
    };
    let v = estimate(0.0, 0.0, 2026);
    let vacuum_ok = v.squeezing_db.abs() <= v.error_db && v.antisqueezing_db.abs() <= v.error_db;

    let (eta, r) = (0.016, 0.761);
    let eta_eff = eta / (1.0 + eps);
    let (sq_model, asq_model) = (estimation::model_variance_db(r, eta_eff, -1.0), estimation::model_variance_db(r, eta_eff, 1.0));
    let mut hits = 0;
    for rep in 0..100u64 {
        let e = estimate(eta, r, 10_000 + rep);
        if (e.squeezing_db - sq_model).abs() <= e.error_db && (e.antisqueezing_db - asq_model).abs() <= e.error_db {
            hits += 1;
        }
    }
    outcome(
        vacuum_ok && hits >= 95,
        format!(
            "vacuum {:.4}/{:.4} dB +/- {:.4}; squeezed within error bars in {hits}/100 replicas (model {sq_model:.4}/{asq_model:.4} dB)",
            v.squeezing_db, v.antisqueezing_db, v.error_db
        ),
    )
}

fn loss_budget() -> Outcome {
    let total = estimation::loss_budget(&[("antenna", 3.78), ("waveguide", 0.321), ("photodiode", 1.52)]).unwrap();
    let residual = estimation::de_embed(8.66, &[1.14, 0.8, 1.0]).unwrap();
    let pass = format!("{total:.2}") == "5.62" && format!("{residual:.2}") == "5.72";
    outcome(pass, format!("expected on-chip {total:.3} dB, de-embedded {residual:.3} dB"))
}

fn determinism() -> Outcome {
    let sets: Vec<String> = [
        "ramp.frequency_hz=40",
        "ramp.duration_s=0.05",
        "ramp.sampling_rate=2e6",
        "estimator.window_size=1000",
        "channel_scaling.channels=[1, 8]",
        "cluster.duration_s=0.1",
        "cluster.decimation=100",
        "cluster.segment_len=100",
        "cluster.window_size=2000",
        "imaging.wigner_points=5",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let config = ExperimentConfig::from_toml_with_overrides("", &sets).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    for sub in Subcommand::ALL {
        let read = |tag: &str| {
            let dir = tmp.path().join(format!("{}-{tag}", sub.name()));
            let paths = experiments::run(sub, &ExperimentConfig { output_dir: dir.clone(), ..config.clone() }).unwrap();
            paths
                .iter()
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                .map(|p| (p.strip_prefix(&dir).unwrap().to_path_buf(), std::fs::read(p).unwrap()))
                .collect::<Vec<_>>()
        };
        if read("a") != read("b") {
            differing.push(sub.name());
        }
    }
    outcome(differing.is_empty(), format!("{} subcommands compared, differing: {differing:?}", Subcommand::ALL.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("closed-form/oracle agreement", closed_form_agreement),
        ("efficiency inversion", efficiency_inversion),
        ("geometric losses", geometric_losses),
        ("beamforming optimality", beamforming_optimality),
        ("calibration", calibration_trials),
        ("channel scaling", channel_scaling),
        ("pump sweep", pump_sweep),
        ("beamwidth", beamwidth),
        ("field of view", field_of_view),
        ("cluster state", cluster_state),
        ("KDE estimator", kde_estimator),
        ("loss budget", loss_budget),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {:>2} {name}: {} [{:.1} s]", i + 1, o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 && std::env::var("QPA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
