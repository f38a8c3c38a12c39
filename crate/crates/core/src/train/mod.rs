//! Supervised training: AdamW on L1-regularized cross-entropy, early
//! stopping on validation loss and checkpointing of the best validation
//! macro F1.

mod early_stop;
mod optim;
mod run_dir;
mod trainer;

pub use early_stop::{simulate_early_stopping, EarlyStopping};
pub use optim::{adamw_step, l1_penalty, OptimState};
pub use run_dir::{EpochMetrics, RunDir};
pub use trainer::{
    evaluate, prepare_images, train, train_step, BatchLoss, Evaluation, FoldData, TrainReport,
};

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::{rng_for, stream, Prng};

pub const LR_RANGE: (f64, f64) = (1e-6, 1e-3);
pub const BETA1_RANGE: (f64, f64) = (0.88, 0.99);
pub const BETA2_RANGE: (f64, f64) = (0.93, 0.999);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub l1_weight: f64,
    /// Epochs without a strictly lower validation loss before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Background batch-building threads; never affects results.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            eps: 1e-6,
            l1_weight: 1e-5,
            patience: 20,
            max_epochs: 200,
            batch_size: 16,
            seed: 42,
            workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let in_range = |name: &str, v: f64, (lo, hi): (f64, f64)| {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(config(format!("{name} = {v} outside [{lo}, {hi}]")))
            }
        };
        in_range("lr", self.lr, LR_RANGE)?;
        in_range("beta1", self.beta1, BETA1_RANGE)?;
        in_range("beta2", self.beta2, BETA2_RANGE)?;
        in_range("weight_decay", self.weight_decay, (0.0, 1.0))?;
        in_range("l1_weight", self.l1_weight, (0.0, f64::MAX))?;
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(config(format!("eps = {} must be positive", self.eps)));
        }
        for (name, v) in [
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Every random stream of a run, derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunContext {
    pub seed: u64,
}

pub fn set_determinism(seed: u64) -> RunContext {
    RunContext { seed }
}

impl RunContext {
    /// Seed for parameter initialization.
    pub fn init_seed(&self) -> u64 {
        self.seed
    }

    /// Seed for shuffling and augmentation in the data loaders.
    pub fn loader_seed(&self) -> u64 {
        self.seed
    }

    /// Stream for dropout and stochastic depth in `epoch`.
    pub fn layer_rng(&self, epoch: usize) -> Prng {
        rng_for(self.seed, &[stream::LAYERS, epoch as u64])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn out_of_range_values_rejected() {
        let bad = [
            TrainConfig {
                lr: 2e-3,
                ..Default::default()
            },
            TrainConfig {
                lr: 1e-7,
                ..Default::default()
            },
            TrainConfig {
                beta1: 0.8,
                ..Default::default()
            },
            TrainConfig {
                beta2: 0.9999,
                ..Default::default()
            },
            TrainConfig {
                patience: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                eps: 0.0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        // beta1 above beta2 is allowed: the two ranges are independent.
        TrainConfig {
            beta1: 0.99,
            beta2: 0.95,
            ..Default::default()
        }
        .validate()
        .unwrap();
    }

    #[test]
    fn json_defaults_fill_missing_fields() {
        let c: TrainConfig = serde_json::from_str(r#"{"lr": 0.0005, "max_epochs": 3}"#).unwrap();
        assert_eq!((c.lr, c.max_epochs, c.patience, c.seed), (5e-4, 3, 20, 42));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 1}"#).is_err());
    }
}
