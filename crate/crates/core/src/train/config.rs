use serde::{Deserialize, Serialize};

use super::optim::{AdamParams, OptimizerParams, SgdParams};
use crate::data::AugmentationSpec;
use crate::error::{Error, Result};
use crate::metrics::{DEFAULT_DICE_EPSILON, DEFAULT_THRESHOLD};
use crate::model::OptimizerKind;

/// Optimization settings. Every field has a default so configuration files
/// only list what they change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    /// SGD only.
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub seed: u64,
    /// Weight of binary cross-entropy in the loss; the rest is Dice loss.
    pub loss_mix: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: u64,
    pub dice_epsilon: f64,
    pub threshold: f64,
    pub max_grad_norm: Option<f64>,
    pub augmentation: AugmentationSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            momentum: 0.9,
            batch_size: 8,
            epochs: 100,
            seed: 0,
            loss_mix: 0.0,
            patience: 20,
            dice_epsilon: DEFAULT_DICE_EPSILON,
            threshold: DEFAULT_THRESHOLD,
            max_grad_norm: None,
            augmentation: AugmentationSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn optimizer_params(&self) -> OptimizerParams {
        match self.optimizer {
            OptimizerKind::Adam => OptimizerParams::Adam(AdamParams {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps_adam,
            }),
            OptimizerKind::Sgd => OptimizerParams::Sgd(SgdParams {
                learning_rate: self.learning_rate,
                momentum: self.momentum,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer_params().validate()?;
        self.augmentation.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.loss_mix) {
            return Err(Error::Config(format!("loss_mix {} must be in [0, 1]", self.loss_mix)));
        }
        if !(self.dice_epsilon > 0.0) {
            return Err(Error::Config("dice_epsilon must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must be in (0, 1)".into()));
        }
        if matches!(self.max_grad_norm, Some(m) if !(m > 0.0)) {
            return Err(Error::Config("max_grad_norm must be positive".into()));
        }
        Ok(())
    }
}
