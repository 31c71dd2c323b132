use std::path::Path;

use serde::{Deserialize, Serialize};

use super::world::WorldConfig;
use crate::classifier::{CapacityTier, TrainConfig};
use crate::error::{Error, Result};
use crate::vision::VisionConfig;

/// Everything one experimental condition depends on. Stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub k: usize,
    pub alpha: f64,
    pub capacity: CapacityTier,
    pub train_fraction: f64,
    /// Pixel noise added to test frames.
    pub noise_sigma: f64,
    /// Pixel noise added to training frames; off by default.
    pub train_noise_sigma: f64,
    pub trajectory_length: usize,
    pub feature_blocks: usize,
    /// Gaussian blur applied before feature extraction (pixels).
    pub feature_smoothing: f64,
    pub world: WorldConfig,
    pub training: TrainConfig,
    pub vision: VisionConfig,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            k: 50,
            alpha: 0.1,
            capacity: CapacityTier::Medium,
            train_fraction: 1.0,
            noise_sigma: 0.0,
            train_noise_sigma: 0.0,
            trajectory_length: 300,
            feature_blocks: 8,
            feature_smoothing: 1.0,
            world: WorldConfig::default(),
            training: TrainConfig::default(),
            vision: VisionConfig::default(),
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("k must be at least 2"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::invalid("train_fraction must lie in (0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.train_noise_sigma >= 0.0) {
            return Err(Error::invalid("noise levels must be non-negative"));
        }
        if self.feature_blocks == 0 || !(self.feature_smoothing >= 0.0) {
            return Err(Error::invalid("feature_blocks must be positive and feature_smoothing non-negative"));
        }
        if self.trajectory_length < 10 {
            return Err(Error::invalid("trajectory_length must be at least 10"));
        }
        self.world.validate(self.trajectory_length)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
