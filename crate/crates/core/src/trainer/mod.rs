//! Classification head, BCE training with Adam, evaluation, checkpoints and
//! attention export.

mod checkpoint;
mod export;
mod fit;
mod metrics;
mod model;
pub mod selfcheck;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::AdamHyper;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use export::{attention_dump, export_attention, AttentionDump, BlockDump, HeadDump, PointDump};
pub use fit::{sample_gradients, train, TrainHistory};
pub use metrics::{aggregate_by_subject, auc, evaluate, score_samples, Aggregation, Confusion, EvalReport, ScoredSample, THRESHOLD};
pub use model::{classify, Model, ModelConfig, ModelOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default = "TrainConfig::desk", deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Checkpoint interval in epochs.
    pub save_every: usize,
}

/// Full-scale schedule.
impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 5e-5, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, epochs: 100, batch_size: 8, seed: 0, save_every: 10 }
    }
}

impl TrainConfig {
    /// Schedule used with the desk-scale model.
    pub fn desk() -> Self {
        Self { lr: 1e-3, epochs: 60, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be a non-negative number, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.batch_size == 0 || self.save_every == 0 {
            return Err(Error::Config("batch_size and save_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper { lr: self.lr, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }
}
