//! Optimizers, the training loop with best-on-validation selection, early
//! stopping and checkpoint resume, evaluation, and gradient checking.

mod config;
pub mod gradcheck;
mod history;
mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, Sample};
use crate::error::{Error, Result};
use crate::metrics::{binarize, segmentation_loss, AgreementCounts, DiceSums, MetricReport};
use crate::model::{Checkpoint, TrainProgress, UNet};
use crate::parallel::reference_mode;
use crate::tensor::{Mode, Tensor};

pub use config::TrainConfig;
pub use gradcheck::{gradient_check, CaseReport, GradcheckOptions, GradcheckReport, GroupResult, Scope};
pub use history::{EpochRecord, History, HISTORY_HEADER};
pub use optim::{adam_step, sgd_step, AdamParams, Optimizer, OptimizerParams, SgdParams};

const EVAL_BATCH: usize = 8;
const EMPTY_VAL_WARNING: &str =
    "validation set is empty: early stopping and best-model selection are disabled";

/// Stack the images and masks of `samples` into `[B, C, IS, IS]` and `[B, 1, IS, IS]`.
pub fn collate(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    let masks: Vec<_> = samples.iter().map(|s| s.mask.clone()).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

/// Eval-mode probabilities `[1, IS, IS]` for each sample, in order.
pub fn predict(model: &UNet<f32>, samples: &[Sample]) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = collate(&refs)?;
        let probs = model.infer(&x)?;
        for b in 0..chunk.len() {
            let p = probs.batch_item(b)?;
            let d = p.dims()[1..].to_vec();
            out.push(p.reshape(d)?);
        }
    }
    Ok(out)
}

/// Eval-mode metrics over all samples with Dice reduced jointly.
pub fn evaluate(model: &UNet<f32>, samples: &[Sample], epsilon: f64, threshold: f64) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluate", "no samples to evaluate"));
    }
    let mut soft = DiceSums::default();
    let mut hard = DiceSums::default();
    let mut agree = AgreementCounts::default();
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, target) = collate(&refs)?;
        let probs = model.infer(&x)?;
        if !probs.is_finite() {
            return Err(Error::NonFinite {
                what: "evaluation output".into(),
            });
        }
        let bin = binarize(&probs, threshold)?;
        soft.add(&probs, &target)?;
        hard.add(&bin, &target)?;
        agree.add(&bin, &target)?;
    }
    Ok(MetricReport {
        soft_dice: soft.dice(epsilon)?,
        hard_dice: hard.dice(epsilon)?,
        pixel_accuracy: agree.accuracy(),
        threshold,
        epsilon,
    })
}

/// Training state that survives a checkpoint round trip.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    model: UNet<f32>,
    optimizer: Optimizer<f32>,
    progress: TrainProgress,
    best: Option<Vec<Tensor<f32>>>,
    history: History,
}

impl Trainer {
    pub fn new(model: UNet<f32>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            cfg: cfg.clone(),
            model,
            optimizer: Optimizer::new(cfg.optimizer_params())?,
            progress: TrainProgress {
                epoch: 0,
                seed: cfg.seed,
                best_val_dice: None,
                best_epoch: 0,
                stale_epochs: 0,
            },
            best: None,
            history: History::default(),
        })
    }

    /// Continue from a checkpoint written by [`Trainer::checkpoint`]. A
    /// checkpoint without training state starts at epoch 0.
    pub fn resume(ckpt: Checkpoint, cfg: &TrainConfig) -> Result<Self> {
        let mut t = Trainer::new(ckpt.model, cfg)?;
        if let Some(p) = ckpt.progress {
            if p.seed != cfg.seed {
                return Err(Error::Config(format!(
                    "checkpoint was trained with seed {}, configuration has {}",
                    p.seed, cfg.seed
                )));
            }
            t.progress = p;
        }
        if let Some(snap) = &ckpt.optimizer {
            t.optimizer = Optimizer::restore(cfg.optimizer_params(), snap)?;
        }
        t.best = ckpt.best;
        Ok(t)
    }

    pub fn model(&self) -> &UNet<f32> {
        &self.model
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn progress(&self) -> &TrainProgress {
        &self.progress
    }

    pub fn early_stopped(&self) -> bool {
        self.cfg.patience > 0 && self.progress.stale_epochs >= self.cfg.patience
    }

    pub fn finished(&self) -> bool {
        self.progress.epoch >= self.cfg.epochs || self.early_stopped()
    }

    /// Current state, for resuming.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.optimizer.snapshot()),
            progress: Some(self.progress.clone()),
            best: self.best.clone(),
            norm: None,
        }
    }

    /// Parameters with the best validation soft Dice so far, or the current
    /// ones when nothing has been validated.
    pub fn best_model(&self) -> Result<UNet<f32>> {
        let mut m = self.model.clone();
        if let Some(best) = &self.best {
            m.load_tensors(best.clone())?;
        }
        Ok(m)
    }

    /// Run one epoch: seeded shuffle, on-the-fly augmentation, one optimizer
    /// step per batch, then validation.
    pub fn run_epoch(&mut self, train: &[Sample], val: &[Sample]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::invalid("train", "training set is empty"));
        }
        if val.is_empty() && !self.history.warnings.iter().any(|w| w == EMPTY_VAL_WARNING) {
            self.history.warnings.push(EMPTY_VAL_WARNING.to_string());
        }
        let start = Instant::now();
        let epoch = self.progress.epoch + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let augmented = idx
                .iter()
                .map(|&i| augment(&train[i], &self.cfg.augmentation, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Sample> = augmented.iter().collect();
            let (x, target) = collate(&refs)?;
            let probs = self.model.forward(&x, Mode::Train)?;
            let where_ = || format!("epoch {epoch}, batch {bi}");
            if !probs.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("model output at {}", where_()),
                });
            }
            let loss = segmentation_loss(&probs, &target, self.cfg.dice_epsilon, self.cfg.loss_mix)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("loss at {}", where_()),
                });
            }
            self.model.backward(&loss.grad)?;
            self.optimizer.step(&mut self.model, self.cfg.max_grad_norm)?;
            loss_sum += loss.total;
            batches += 1;
        }

        let (val_dice, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let r = evaluate(&self.model, val, self.cfg.dice_epsilon, self.cfg.threshold)?;
            (Some(r.soft_dice), Some(r.pixel_accuracy))
        };
        self.progress.epoch = epoch;
        if let Some(d) = val_dice {
            if self.progress.best_val_dice.map_or(true, |b| d > b) {
                self.progress.best_val_dice = Some(d);
                self.progress.best_epoch = epoch;
                self.progress.stale_epochs = 0;
                self.best = Some(self.model.state());
            } else {
                self.progress.stale_epochs += 1;
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_soft_dice: val_dice,
            val_pixel_acc: val_acc,
            seconds: if reference_mode() {
                0.0
            } else {
                start.elapsed().as_secs_f64()
            },
        };
        self.history.records.push(record.clone());
        Ok(record)
    }

    /// Run epochs until finished, calling `on_epoch` after each.
    pub fn run(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        while !self.finished() {
            let r = self.run_epoch(train, val)?;
            on_epoch(self, &r)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-on-validation parameters (last epoch without validation data).
    pub model: UNet<f32>,
    pub final_model: UNet<f32>,
    pub history: History,
}

/// Train from scratch until `cfg.epochs` or early stopping.
pub fn train(model: UNet<f32>, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::invalid("train", "training set is empty"));
    }
    let mut t = Trainer::new(model, cfg)?;
    t.run(train, val, |_, _| Ok(()))?;
    Ok(TrainOutcome {
        model: t.best_model()?,
        final_model: t.model.clone(),
        history: t.history.clone(),
    })
}
