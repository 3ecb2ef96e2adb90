use std::path::Path;

use pridnet::data::NoiseSpec;
use pridnet::model::ModelConfig;
use pridnet::train::TrainPlan;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// On-disk run configuration. Every section is optional and falls back to
/// its defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub model: ModelConfig,
    pub train: TrainPlan,
    pub noise: NoiseSpec,
}

impl CliConfig {
    /// Small grayscale setup that trains in seconds per epoch.
    pub fn micro() -> Self {
        CliConfig {
            model: ModelConfig::micro(1),
            train: TrainPlan::desk(100),
            noise: NoiseSpec::gaussian(0.1, 0),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Parses and validates; errors carry `line L column C`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: CliConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.model.validate().map_err(|e| e.to_string())?;
        cfg.train.validate().map_err(|e| e.to_string())?;
        cfg.noise.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
