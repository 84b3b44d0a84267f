//! Single-file run configuration (TOML).
//!
//! ```toml
//! version = 1
//!
//! [synth]
//! train_frames = 200
//!
//! [train]
//! epochs = 20
//! [train.weights]
//! lambda1 = 10.0
//!
//! [eval]
//! roi_mm = [4.0, 4.0]
//!
//! [track.config]
//! kernel = [32, 8]
//! ```
//!
//! Every section and key is optional except `version`; unknown keys are
//! rejected at every level.

use std::path::{Path, PathBuf};

use ccgan_core::error::{Error, Result};
use ccgan_core::tracking::TrackingConfig;
use ccgan_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::synth::SynthConfig;

pub const CONFIG_VERSION: u32 = 1;
pub const SNAPSHOT_NAME: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub track: TrackSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Axial × lateral size of the square-ish window cropped around each
    /// point target.
    pub roi_mm: [f64; 2],
    /// Targets at or below this depth count as "deep" in summaries.
    pub deep_threshold_mm: f64,
    /// Speckle ROI file for the Nakagami estimate.
    pub rois: Option<PathBuf>,
    /// Point-target list for resolution measurements.
    pub targets: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            roi_mm: [4.0, 4.0],
            deep_threshold_mm: 8.0,
            rois: None,
            targets: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrackSection {
    pub config: TrackingConfig,
    /// Region-of-interest mask container; the whole frame when absent.
    pub mask: Option<PathBuf>,
}

impl Default for RunConfig {
    /// Full-scale protocol: 256-channel generator, 200 epochs.
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            track: TrackSection::default(),
        }
    }
}

/// Named starting points for the configuration.
pub fn preset(name: &str) -> Result<RunConfig> {
    match name {
        "full" => Ok(RunConfig::default()),
        "desk" => Ok(RunConfig {
            synth: SynthConfig::desk(),
            train: desk_train(0),
            ..RunConfig::default()
        }),
        other => Err(Error::Config(format!("unknown preset {other:?} (expected desk or full)"))),
    }
}

/// Desk-scale training: every width scaled down by 64 from the full network
/// (generator 256 → 4 channels, discriminator 64 → 1), two residual modules,
/// 20 epochs with the decay starting halfway.
pub fn desk_train(seed: u64) -> TrainConfig {
    TrainConfig::desk(seed)
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.synth.validate()?;
        self.train.validate()?;
        if !(self.eval.roi_mm.iter().all(|v| *v > 0.0) && self.eval.deep_threshold_mm >= 0.0) {
            return Err(Error::Config("eval ROI size must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the resolved configuration into `dir`.
    pub fn snapshot(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
        let path = dir.join(SNAPSHOT_NAME);
        ccgan_core::container::write_atomic(&path, self.to_toml().as_bytes())?;
        Ok(path)
    }
}
