//! Unpaired training of the two generators and two discriminators.
//!
//! Domain A is phased-array, domain B linear-array. `G_A: A → B` and
//! `G_B: B → A`; `D_A` judges domain-B frames (real B against `G_A(A)`),
//! `D_B` judges domain-A frames.

mod checkpoint;
mod run;
mod step;
mod translate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::networks::{DiscriminatorSpec, GeneratorSpec};
use crate::nn::Adam;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use run::{train, RunLayout, TrainOutcome, LOSS_HEADER, VALIDATION_HEADER};
pub use step::{batch_tensor, generator_objective, train_step, validation_report, GeneratorPass, StepOutcome, TrainState};
pub use translate::translate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_decay_start_epoch: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weights: LossWeights,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Checkpoint period in epochs; the final epoch is always written.
    pub checkpoint_every: usize,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr_initial: 2e-4,
            lr_decay_start_epoch: 100,
            batch_size: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            weights: LossWeights::default(),
            validation_fraction: 0.10,
            seed: 0,
            checkpoint_every: 10,
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset: 64×64 frames, a 4-channel two-module generator,
    /// a 1-channel-base discriminator (both widths scaled by 1/64 from the
    /// full networks), 20 epochs with decay from epoch 10.
    pub fn desk(seed: u64) -> Self {
        Self {
            epochs: 20,
            lr_decay_start_epoch: 10,
            seed,
            generator: GeneratorSpec {
                base_channels: 4,
                n_modules: 2,
                ..GeneratorSpec::default()
            },
            discriminator: DiscriminatorSpec::reduced(1),
            ..Self::default()
        }
    }

    pub fn adam(&self) -> Adam {
        Adam {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..Adam::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.generator.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.discriminator.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return Err(Error::Config(format!("lr_initial must be positive, got {}", self.lr_initial)));
        }
        if self.lr_decay_start_epoch > self.epochs {
            return Err(Error::Config(format!(
                "lr_decay_start_epoch {} exceeds epochs {}",
                self.lr_decay_start_epoch, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Learning rate for `epoch`: constant before the decay start, then linear
/// to exactly zero at `epochs`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch > cfg.epochs {
        return Err(Error::Config(format!("epoch {epoch} outside [0, {}]", cfg.epochs)));
    }
    if epoch < cfg.lr_decay_start_epoch {
        return Ok(cfg.lr_initial);
    }
    if epoch == cfg.epochs {
        return Ok(0.0);
    }
    let remaining = (cfg.epochs - epoch) as f64 / (cfg.epochs - cfg.lr_decay_start_epoch) as f64;
    Ok(cfg.lr_initial * remaining)
}

/// Deterministic per-purpose seed derivation (splitmix64 finalizer).
pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests;
