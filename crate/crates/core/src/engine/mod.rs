//! Double-exchange training: forward wiring, optimizer, schedules,
//! checkpoints and the training loop.

pub mod checkpoint;
pub mod cycle;
pub mod data;
pub mod optim;
pub mod same_route;
pub mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

pub use checkpoint::CheckpointState;
pub use cycle::{first_conversion, second_conversion, style_routings, CycleBatch, Exchange, FirstConversion, StyleRouting};
pub use optim::{lr_schedules, Adam, LrSchedule};
pub use same_route::{same_loss_gradients, SameLossGradient};
pub use trainer::{convert, run_training, training_step, RunOptions, StepContext, TrainBatch, TrainingOutcome};

/// Which re-encodings the same-losses compare against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SameLossStage {
    /// `a_C` vs content of `E(a_tilde)`, `a_S` vs style of `E(b_tilde)`.
    First,
    /// `a_C`, `a_S` vs the re-encoding of the cycle output `a_hat`.
    #[default]
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    #[serde(flatten)]
    pub weights: LossWeights,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lr_initial: f64,
    pub lr_decay_per_epoch: f64,
    pub lr_floor: f64,
    pub lr_schedule: String,
    pub epochs: usize,
    /// `None`: one pass over the training utterances, `ceil(n / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    pub batch_size: usize,
    pub segment_frames: usize,
    pub same_loss_stage: SameLossStage,
    /// `generator` or `joint`; see [`same_route`].
    pub same_loss_grad: String,
    pub grl_placement: String,
    pub style_routing: String,
    pub seed: u64,
    /// Loss terms removed from the objective.
    pub ablate: Vec<String>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-9,
            lr_initial: 1e-4,
            lr_decay_per_epoch: 5e-6,
            lr_floor: 1e-6,
            lr_schedule: "subtractive".into(),
            epochs: 100,
            steps_per_epoch: None,
            batch_size: 8,
            segment_frames: 128,
            same_loss_stage: SameLossStage::Second,
            same_loss_grad: "generator".into(),
            grl_placement: "discriminator".into(),
            style_routing: "exchange".into(),
            seed: 0,
            ablate: Vec::new(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.adam_beta1) || !unit(self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps > 0".into()));
        }
        if !(self.lr_initial > 0.0) || !(self.lr_floor >= 0.0) || !(self.lr_decay_per_epoch >= 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.segment_frames == 0 {
            return Err(Error::Config("batch_size and segment_frames must be > 0".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be > 0".into()));
        }
        lr_schedules().create(&self.lr_schedule)?;
        crate::model::grl_placements().create(&self.grl_placement)?;
        style_routings().create(&self.style_routing)?;
        same_loss_gradients().create(&self.same_loss_grad)?;
        crate::losses::LossSet::without(&self.ablate)?;
        Ok(())
    }

    pub fn steps_per_epoch_for(&self, n_train_utterances: usize) -> usize {
        self.steps_per_epoch
            .unwrap_or_else(|| n_train_utterances.div_ceil(self.batch_size))
            .max(1)
    }
}
