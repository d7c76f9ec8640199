//! The `--config` JSON file: one section per module.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wdn_core::data::{AnomalyPlan, SynthConfig};
use wdn_core::impute::ForestConfig;
use wdn_core::models::{CnnEmdConfig, DetectConfig, FusionConfig};
use wdn_core::nn::TrainConfig;
use wdn_core::signal::EmdConfig;

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub forest: ForestConfig,
    pub emd: EmdConfig,
    pub cnn_emd: CnnEmdConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub detect: DetectConfig,
    pub anomalies: AnomalyPlan,
}

impl RunConfig {
    /// Reads and validates a config file; any problem is a usage error.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: wdn_core::Error| CliError::Usage(format!("invalid config: {e}"));
        self.cnn_emd.validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        self.detect.validate().map_err(usage)?;
        let mut fusion = self.fusion.clone();
        fusion.n_points = fusion.n_points.max(1);
        fusion.validate(&self.cnn_emd).map_err(usage)?;
        if self.synth.days == 0 || self.synth.n_points == 0 || !(self.synth.noise_std >= 0.0) {
            return Err(CliError::Usage("invalid config: synth needs days, n_points >= 1 and noise_std >= 0".into()));
        }
        Ok(())
    }

    /// Points every seeded section at `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.forest.seed = seed;
        self.train.seed = seed;
    }
}
