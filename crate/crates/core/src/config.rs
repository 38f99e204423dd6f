//! Experiment configuration read from TOML. Every section is optional and
//! falls back to the desk-scale defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{FlowConfig, PairingConfig, PhantomConfig};
use crate::embedding::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::querying::QueryingConfig;
use crate::trainer::{Aggregation, ModelConfig, TrainConfig};

/// File name of the effective configuration echoed into output directories.
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub subjects: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { subjects: 16, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fraction of each class's subjects placed in the training set.
    pub train_fraction: f64,
    pub aggregation: Aggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { train_fraction: 0.8, aggregation: Aggregation::Pair }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub phantom: PhantomConfig,
    pub pairing: PairingConfig,
    pub flow: FlowConfig,
    pub embedding: EmbeddingConfig,
    pub querying: QueryingConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            phantom: PhantomConfig::default(),
            pairing: PairingConfig::default(),
            flow: FlowConfig::default(),
            embedding: EmbeddingConfig::desk(),
            querying: QueryingConfig::desk(),
            train: TrainConfig::desk(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Full-scale architecture and schedule on 224³ inputs.
    pub fn full_scale() -> Self {
        Self {
            phantom: PhantomConfig { size: 224, ..PhantomConfig::default() },
            embedding: EmbeddingConfig::full_scale(),
            querying: QueryingConfig::full_scale(),
            train: TrainConfig::default(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// Writes the configuration as [`EFFECTIVE_CONFIG_FILE`] inside `dir`.
    pub fn echo_to(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig { embedding: self.embedding.clone(), querying: self.querying.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.pairing.validate()?;
        self.model().validate()?;
        self.train.validate()?;
        if !(self.eval.train_fraction > 0.0 && self.eval.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction must lie in (0, 1), got {}", self.eval.train_fraction)));
        }
        Ok(())
    }
}
