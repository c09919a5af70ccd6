//! Experiment configuration: TOML sections mirroring the module types, dotted
//! `key=value` overrides and the hash stamped on every artifact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::aperture::{ApertureGeometry, BeamSpec};
use crate::calibration::{ActuatorModel, CalibrationConfig};
use crate::cluster::ClusterPipelineConfig;
use crate::error::{QpaError, Result};
use crate::receiver::{PhaseRamp, ReceiverModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub r: f64,
    /// Efficiency of the best channel combination.
    pub eta_c: f64,
    pub r_bounds: [f64; 2],
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self { r: 0.761, eta_c: 0.021, r_bounds: [0.729, 0.767] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub window_size: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { window_size: 260_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingConfig {
    /// Half-width of the Wigner grid in units of the vacuum standard deviation.
    pub wigner_extent: f64,
    pub wigner_points: usize,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self { wigner_extent: 3.0, wigner_points: 41 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelScalingConfig {
    pub channels: Vec<usize>,
}

impl Default for ChannelScalingConfig {
    fn default() -> Self {
        Self { channels: (1..=8).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PumpSweepConfig {
    pub eta: f64,
    /// mW^(-1/2)
    pub mu: f64,
    pub powers_mw: Vec<f64>,
    /// Standard deviation of the Gaussian noise added to each level.
    pub noise_db: f64,
}

impl Default for PumpSweepConfig {
    fn default() -> Self {
        Self { eta: 0.016, mu: 0.038, powers_mw: (0..=10).map(|k| 250.0 * k as f64).collect(), noise_db: 0.012 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub channels: Vec<usize>,
    pub beamwidth_half_range_deg: f64,
    pub beamwidth_points: usize,
    pub fov_half_range_deg: f64,
    pub fov_points: usize,
    /// Normalized level at which widths are read off.
    pub level: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 32],
            beamwidth_half_range_deg: 1.0,
            beamwidth_points: 201,
            fov_half_range_deg: 3.0,
            fov_points: 61,
            level: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossComponent {
    pub name: String,
    pub db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossBudgetConfig {
    pub components: Vec<LossComponent>,
    pub measured_total_db: f64,
    pub known_db: Vec<f64>,
}

impl Default for LossBudgetConfig {
    fn default() -> Self {
        let c = |name: &str, db| LossComponent { name: name.into(), db };
        Self {
            components: vec![
                c("antenna insertion", 3.78),
                c("waveguide propagation", 0.321),
                c("photodiode quantum efficiency", 1.52),
            ],
            measured_total_db: 8.66,
            known_db: vec![1.14, 0.8, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SncConfig {
    pub min_uw: f64,
    pub max_uw: f64,
    pub points: usize,
}

impl Default for SncConfig {
    fn default() -> Self {
        Self { min_uw: 1.0, max_uw: 1e4, points: 41 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub geometry: ApertureGeometry,
    pub beam: BeamSpec,
    pub receiver: ReceiverModel,
    pub actuator: ActuatorModel,
    pub calibration: CalibrationConfig,
    pub ramp: PhaseRamp,
    pub estimator: EstimatorConfig,
    pub source: SourceConfig,
    pub imaging: ImagingConfig,
    pub channel_scaling: ChannelScalingConfig,
    pub pump_sweep: PumpSweepConfig,
    pub scan: ScanConfig,
    pub cluster: ClusterPipelineConfig,
    pub loss_budget: LossBudgetConfig,
    pub snc: SncConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 1,
            output_dir: PathBuf::from("out"),
            geometry: Default::default(),
            beam: Default::default(),
            receiver: Default::default(),
            actuator: Default::default(),
            calibration: Default::default(),
            ramp: Default::default(),
            estimator: Default::default(),
            source: Default::default(),
            imaging: Default::default(),
            channel_scaling: Default::default(),
            pump_sweep: Default::default(),
            scan: Default::default(),
            cluster: Default::default(),
            loss_budget: Default::default(),
            snc: Default::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> QpaError {
    QpaError::Config(e.to_string())
}

/// Parses the right-hand side of an override as a TOML value, falling back to
/// a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` to a parsed TOML table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override '{assignment}' is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("bad override key '{key}'")));
    }
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("'{part}' in '{key}' is not a section")))?;
    }
    node.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text, applies overrides and validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(config_err)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: ExperimentConfig = table.try_into().map_err(config_err)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |r: Result<()>, section: &str| r.map_err(|e| config_err(format!("[{section}] {e}")));
        wrap(self.geometry.validate(), "geometry")?;
        wrap(self.beam.validate(), "beam")?;
        wrap(self.receiver.validate(), "receiver")?;
        wrap(self.actuator.validate(), "actuator")?;
        wrap(self.calibration.validate(), "calibration")?;
        wrap(self.ramp.validate(), "ramp")?;
        wrap(self.cluster.validate(), "cluster")?;
        let n = self.geometry.n_antennas;
        let fail = |msg: String| Err(config_err(msg));
        if self.estimator.window_size < 2 {
            return fail("[estimator] window_size must be at least 2".into());
        }
        let s = &self.source;
        if !(s.r >= 0.0) || !(s.eta_c > 0.0 && s.eta_c <= 1.0) {
            return fail("[source] need r >= 0 and eta_c in (0, 1]".into());
        }
        if !(s.r_bounds[0] > 0.0 && s.r_bounds[0] <= s.r_bounds[1]) {
            return fail("[source] r_bounds must satisfy 0 < lower <= upper".into());
        }
        if !(self.imaging.wigner_extent > 0.0) || self.imaging.wigner_points < 2 {
            return fail("[imaging] wigner grid needs a positive extent and two or more points".into());
        }
        for (section, list) in [("channel_scaling", &self.channel_scaling.channels), ("scan", &self.scan.channels)] {
            if list.is_empty() || list.iter().any(|&k| k == 0 || k > n) {
                return fail(format!("[{section}] channel counts must lie in 1..={n}"));
            }
        }
        let p = &self.pump_sweep;
        if !(0.0..=1.0).contains(&p.eta) || !(p.mu >= 0.0) || !(p.noise_db >= 0.0) || p.powers_mw.iter().any(|x| !(*x >= 0.0)) {
            return fail("[pump_sweep] need eta in [0, 1], mu >= 0, noise >= 0 and non-negative powers".into());
        }
        let sc = &self.scan;
        if !(sc.beamwidth_half_range_deg > 0.0 && sc.fov_half_range_deg > 0.0)
            || sc.beamwidth_points < 3
            || sc.fov_points < 3
            || !(sc.level > 0.0 && sc.level < 1.0)
        {
            return fail("[scan] ranges must be positive, at least three points, level in (0, 1)".into());
        }
        if self.cluster.pixel_channels.iter().any(|&j| j >= n) {
            return fail(format!("[cluster] pixel channels must lie below {n}"));
        }
        if !(self.snc.min_uw > 0.0 && self.snc.min_uw < self.snc.max_uw) || self.snc.points < 2 {
            return fail("[snc] need 0 < min_uw < max_uw and two or more points".into());
        }
        if self.loss_budget.components.iter().any(|c| !(c.db >= 0.0)) {
            return fail("[loss_budget] component losses must be >= 0 dB".into());
        }
        Ok(())
    }

    /// The fully resolved configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// sha256 of the resolved configuration, excluding the output directory.
    pub fn hash(&self) -> String {
        let located = ExperimentConfig { output_dir: PathBuf::new(), ..self.clone() };
        hex::encode(Sha256::digest(located.to_toml().as_bytes()))
    }
}
