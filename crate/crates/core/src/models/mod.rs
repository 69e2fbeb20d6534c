//! The three acoustic models plus shared training bookkeeping.

pub mod baseline;
pub mod f0_dar;
pub mod spectral_dar;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainLog {
    pub fn text_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .epochs
            .iter()
            .map(|e| {
                format!(
                    "epoch {:3}  train {:.6}  val {:.6}",
                    e.epoch, e.train_loss, e.val_loss
                )
            })
            .collect();
        lines.push(format!(
            "best epoch {} (val {:.6})",
            self.best_epoch, self.best_val_loss
        ));
        lines
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            batch_size: 4,
            seed: 7,
        }
    }
}

/// Deterministic per-(seed, step, item) RNG stream for data dropout.
pub(crate) fn dropout_stream_seed(seed: u64, step: u64, item: u64) -> u64 {
    seed.wrapping_add(step.wrapping_mul(10_007)).wrapping_add(item)
}
