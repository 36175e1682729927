use super::optim::AdamWConfig;
use crate::config::KeyValues;
use crate::error::{bail, Result};

/// Optimisation hyperparameters for base training and fine-tuning.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Base learning rate.
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs between learning-rate decays.
    pub decay_step: usize,
    pub decay_gamma: f64,
    pub seed: u64,
    /// Run the fine-tuning phase instead of base training.
    pub finetune: bool,
    /// Epochs of the fine-tuning phase.
    pub finetune_epochs: usize,
    /// Fine-tuning learning rate as a fraction of `lr`.
    pub finetune_lr_scale: f64,
}

impl TrainConfig {
    /// 100 epochs at 4e-5 with batches of three, step decay.
    pub fn paper() -> Self {
        Self {
            epochs: 100,
            batch_size: 3,
            lr: 4e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_step: 50,
            decay_gamma: 0.1,
            seed: 0,
            finetune: false,
            finetune_epochs: 50,
            finetune_lr_scale: 0.1,
        }
    }

    /// Schedule sized for the desk model on synthetic data.
    pub fn desk() -> Self {
        Self {
            epochs: 60,
            batch_size: 4,
            lr: 1e-3,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            bail!(Parameter, "batch_size must be >= 1");
        }
        if !(self.decay_gamma > 0.0 && self.decay_gamma <= 1.0) {
            bail!(Parameter, "decay_gamma must lie in (0, 1], got {}", self.decay_gamma);
        }
        if self.decay_step == 0 {
            bail!(Parameter, "decay_step must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!(Parameter, "learning rate must be positive, got {}", self.lr);
        }
        if !(self.finetune_lr_scale > 0.0 && self.finetune_lr_scale.is_finite()) {
            bail!(Parameter, "finetune_lr_scale must be positive, got {}", self.finetune_lr_scale);
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bail!(Parameter, "betas must lie in [0, 1), got ({}, {})", self.beta1, self.beta2);
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            bail!(Parameter, "eps must be positive and weight_decay non-negative");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Step decay: `lr * decay_gamma^floor(epoch / decay_step)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        step_decay(self.lr, self.decay_gamma, self.decay_step, epoch)
    }

    /// Phase learning rate: scaled by `finetune_lr_scale` when fine-tuning.
    pub fn phase_lr_at(&self, epoch: usize) -> f64 {
        let base = if self.finetune {
            self.lr * self.finetune_lr_scale
        } else {
            self.lr
        };
        step_decay(base, self.decay_gamma, self.decay_step, epoch)
    }

    /// Epoch count of the selected phase.
    pub fn phase_epochs(&self) -> usize {
        if self.finetune {
            self.finetune_epochs
        } else {
            self.epochs
        }
    }

    pub fn write_to(&self, kv: &mut KeyValues) -> Result<()> {
        kv.set("train.epochs", self.epochs)?;
        kv.set("train.batch_size", self.batch_size)?;
        kv.set("train.lr", self.lr)?;
        kv.set("train.weight_decay", self.weight_decay)?;
        kv.set("train.beta1", self.beta1)?;
        kv.set("train.beta2", self.beta2)?;
        kv.set("train.eps", self.eps)?;
        kv.set("train.decay_step", self.decay_step)?;
        kv.set("train.decay_gamma", self.decay_gamma)?;
        kv.set("train.seed", self.seed)?;
        kv.set("train.finetune", self.finetune)?;
        kv.set("train.finetune_epochs", self.finetune_epochs)?;
        kv.set("train.finetune_lr_scale", self.finetune_lr_scale)?;
        Ok(())
    }

    /// Reads `train.*` keys, falling back to `base` for absent ones.
    pub fn read_from(kv: &KeyValues, base: &TrainConfig) -> Result<Self> {
        Ok(Self {
            epochs: kv.parsed("train.epochs")?.unwrap_or(base.epochs),
            batch_size: kv.parsed("train.batch_size")?.unwrap_or(base.batch_size),
            lr: kv.parsed("train.lr")?.unwrap_or(base.lr),
            weight_decay: kv.parsed("train.weight_decay")?.unwrap_or(base.weight_decay),
            beta1: kv.parsed("train.beta1")?.unwrap_or(base.beta1),
            beta2: kv.parsed("train.beta2")?.unwrap_or(base.beta2),
            eps: kv.parsed("train.eps")?.unwrap_or(base.eps),
            decay_step: kv.parsed("train.decay_step")?.unwrap_or(base.decay_step),
            decay_gamma: kv.parsed("train.decay_gamma")?.unwrap_or(base.decay_gamma),
            seed: kv.parsed("train.seed")?.unwrap_or(base.seed),
            finetune: kv.parsed("train.finetune")?.unwrap_or(base.finetune),
            finetune_epochs: kv.parsed("train.finetune_epochs")?.unwrap_or(base.finetune_epochs),
            finetune_lr_scale: kv
                .parsed("train.finetune_lr_scale")?
                .unwrap_or(base.finetune_lr_scale),
        })
    }
}

pub fn step_decay(base: f64, gamma: f64, step: usize, epoch: usize) -> f64 {
    base * gamma.powi((epoch / step) as i32)
}
