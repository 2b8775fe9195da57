//! Pipeline configuration, read from TOML.
//!
//! ```toml
//! target_image = "target.png"
//! output_dir = "out"
//!
//! [stain]
//! beta = 0.15
//!
//! [grid]
//! patch_size = 256
//! margin = 64
//!
//! [model]
//! levels = 3
//! base_channels = 8
//!
//! [train]
//! epochs = 50
//! ```
//!
//! Every section and key is optional except the two paths. Relative paths
//! are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use histoseg_core::patching::{DEFAULT_MARGIN, DEFAULT_PATCH_SIZE};
use histoseg_core::{ModelConfig, StainParams, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridParams {
    pub patch_size: usize,
    pub margin: usize,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH_SIZE,
            margin: DEFAULT_MARGIN,
        }
    }
}

/// Architecture knobs; the patch geometry comes from [`GridParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub levels: usize,
    pub base_channels: usize,
    pub seed: u64,
}

impl Default for ModelParams {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            levels: d.levels,
            base_channels: d.base_channels,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub target_image: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub stain: StainParams,
    #[serde(default)]
    pub grid: GridParams,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn new(target_image: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            target_image: target_image.into(),
            output_dir: output_dir.into(),
            stain: StainParams::default(),
            grid: GridParams::default(),
            model: ModelParams::default(),
            train: TrainConfig::default(),
        }
    }

    /// Parses and validates; paths are kept as written.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)
            .map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                other => other,
            })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.target_image = base.join(&config.target_image);
        config.output_dir = base.join(&config.output_dir);
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: histoseg_core::Error| Error::Config(e.to_string());
        self.stain.validate().map_err(wrap)?;
        self.model_config().validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            patch_size: self.grid.patch_size,
            margin: self.grid.margin,
            levels: self.model.levels,
            base_channels: self.model.base_channels,
            seed: self.model.seed,
        }
    }

    /// Overrides both the initialization and the training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn profile_path(&self) -> PathBuf {
        self.output_dir.join("profile.json")
    }

    pub fn normalized_path(&self, id: &str) -> PathBuf {
        self.output_dir.join("normalized").join(format!("{id}.png"))
    }

    pub fn patch_dir(&self, id: &str) -> PathBuf {
        self.output_dir.join("patches").join(id)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output_dir.join("model.ckpt")
    }

    pub fn history_path(&self) -> PathBuf {
        self.output_dir.join("history.csv")
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.output_dir.join("predictions")
    }

    pub fn evaluation_dir(&self) -> PathBuf {
        self.output_dir.join("evaluation")
    }

    pub fn report_path(&self) -> PathBuf {
        self.output_dir.join("report.json")
    }
}
