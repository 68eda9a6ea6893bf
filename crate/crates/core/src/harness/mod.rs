//! Training, evaluation and the ablation grid: AdamW, early stopping on
//! validation Dice, a permanently frozen audio encoder, progressive
//! image-encoder unfreezing and leave-one-speaker-out folds.

mod ablation;
mod data;
mod evaluate;
mod optim;
mod train;

pub use ablation::{run_ablation, AblationConfig, AblationReport, AblationRow, AblationSpec, RunResult};
pub use data::{make_batch, prepare_samples};
pub use evaluate::{evaluate, EvalOutput};
pub use optim::{AdamW, AdamWConfig, EarlyStopping};
pub use train::{apply_unfreeze, train, EpochRecord, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::numcore::NumError;
use crate::objectives::{ContrastiveConfig, LossError, LossWeights};
use crate::synthdata::DataError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty {0} partition")]
    EmptyPartition(&'static str),
    #[error("non-finite gradient in {param}[{index}]; step aborted")]
    NonFiniteGradient { param: String, index: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Unfreezes image-encoder block `block` at the start of `epoch`. Block 0
/// brings the patch and positional embeddings with it; the top block brings
/// the final encoder norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnfreezeStep {
    pub epoch: usize,
    pub block: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub unfreeze_schedule: Vec<UnfreezeStep>,
    pub seed: u64,
    pub loss: LossWeights,
    pub use_contrastive: bool,
    pub contrastive: ContrastiveConfig,
    pub adamw: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            patience: 15,
            max_epochs: 60,
            unfreeze_schedule: vec![UnfreezeStep { epoch: 3, block: 1 }, UnfreezeStep { epoch: 6, block: 0 }],
            seed: 0,
            loss: LossWeights::default(),
            use_contrastive: true,
            contrastive: ContrastiveConfig::default(),
            adamw: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_image_blocks: usize) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if self.unfreeze_schedule.windows(2).any(|w| w[1].epoch < w[0].epoch) {
            return bad("unfreeze_schedule epochs must be nondecreasing".into());
        }
        if let Some(s) = self.unfreeze_schedule.iter().find(|s| s.block >= n_image_blocks) {
            return bad(format!("unfreeze_schedule names block {} of {n_image_blocks}", s.block));
        }
        let a = &self.adamw;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) || !(a.weight_decay >= 0.0) {
            return bad(format!("invalid AdamW settings {a:?}"));
        }
        self.effective_loss().validate()?;
        self.contrastive.validate()?;
        Ok(())
    }

    /// Loss weights with the contrastive term switched off when disabled.
    pub fn effective_loss(&self) -> LossWeights {
        let mut w = self.loss;
        if !self.use_contrastive {
            w.w_contrastive = 0.0;
        }
        w
    }
}

#[cfg(test)]
mod tests;
