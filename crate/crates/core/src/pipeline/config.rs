//! Run configuration, loadable from a TOML file. Angles are in degrees here
//! and converted to radians when the stage configs are built.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{Association, CalibrationConfig, PairStrategy};
use crate::refinement::RefinementConfig;
use crate::screw::deg2rad;
use crate::time_alignment::TimeAlignConfig;
use crate::trajectory::TrajectoryFormat;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSettings {
    /// Correlation rate (Hz); unset selects the slower native rate.
    pub rate: Option<f64>,
    /// Minimum overlap (s).
    pub min_overlap: f64,
    pub refine_peak: bool,
    /// Continue past an unreliable correlation peak.
    pub force: bool,
    /// Skip estimation and use this offset (s).
    pub fixed_dt: Option<f64>,
}

impl Default for AlignSettings {
    fn default() -> Self {
        let d = TimeAlignConfig::default();
        Self {
            rate: d.correlation_rate,
            min_overlap: d.min_overlap,
            refine_peak: d.refine,
            force: false,
            fixed_dt: None,
        }
    }
}

impl AlignSettings {
    pub fn to_config(&self) -> TimeAlignConfig {
        TimeAlignConfig {
            correlation_rate: self.rate,
            min_overlap: self.min_overlap,
            refine: self.refine_peak,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub eta_deg: f64,
    pub mu: f64,
    pub phi_deg: f64,
    /// Inlier translation threshold (m).
    pub psi: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub min_inliers: usize,
    pub strategy: PairStrategy,
    pub robust_kernel: bool,
    pub overlapping: bool,
    pub association: Association,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            eta_deg: 5.0,
            mu: 5.0,
            phi_deg: 0.5,
            psi: 0.02,
            max_iterations: 200,
            seed: 0,
            min_inliers: 10,
            strategy: PairStrategy::RotConstr,
            robust_kernel: true,
            overlapping: false,
            association: Association::Nearest,
        }
    }
}

impl CalibrationSettings {
    pub fn to_config(&self) -> CalibrationConfig {
        CalibrationConfig {
            eta: deg2rad(self.eta_deg),
            mu: self.mu,
            phi: deg2rad(self.phi_deg),
            psi: self.psi,
            max_iterations: self.max_iterations,
            rng_seed: self.seed,
            min_inliers: self.min_inliers,
            strategy: self.strategy,
            robust_kernel: self.robust_kernel,
            overlapping: self.overlapping,
            association: self.association,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub enabled: bool,
    pub with_scale: bool,
    /// Association window (ms).
    pub max_dt_ms: f64,
    /// Fit a rigid alignment between the world frames before computing the
    /// errors. Without it both trajectories must share a world frame.
    pub umeyama: bool,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            with_scale: false,
            max_dt_ms: 10.0,
            umeyama: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hand: Option<PathBuf>,
    pub eye: Option<PathBuf>,
    pub hand_format: TrajectoryFormat,
    pub eye_format: TrajectoryFormat,
    pub out: PathBuf,
    /// Run the batch refinement after the linear stage.
    pub refine: bool,
    /// Worker threads; unset uses all cores.
    pub jobs: Option<usize>,
    pub align: AlignSettings,
    pub calibration: CalibrationSettings,
    pub refinement: RefinementConfig,
    pub evaluation: EvaluationSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hand: None,
            eye: None,
            hand_format: TrajectoryFormat::Tum,
            eye_format: TrajectoryFormat::Tum,
            out: PathBuf::from("out"),
            refine: true,
            jobs: None,
            align: AlignSettings::default(),
            calibration: CalibrationSettings::default(),
            refinement: RefinementConfig::default(),
            evaluation: EvaluationSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Toml {
            path: origin.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}
