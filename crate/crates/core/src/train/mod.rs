//! Optimization, input pipeline, checkpoints and the two training phases.

mod checkpoint;
mod metrics;
mod optim;
mod pipeline;
mod prep;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError, Entry, MAGIC, VERSION};
pub use metrics::{MetricRecord, Metrics};
pub use optim::{lr_at, Sgd};
pub use pipeline::{distill_student, evaluate, train_teacher, Accuracy, Batcher, TrainRun, EVAL_BATCH};
pub use prep::{augment, crop_flip, standardize, AugmentFlags, ChannelStats, CROP_PAD, STD_FLOOR};

use crate::data::DataError;
use crate::nn::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no gradient for trainable parameter {0}")]
    MissingGradient(String),
    #[error("optimizer visited {visited} scalars, model has {expected}")]
    CountMismatch { visited: usize, expected: usize },
    #[error("non-finite loss at iteration {iter}")]
    NonFinite { iter: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        Self::Model(e.into())
    }
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_decay_iters: Vec<usize>,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_iters: usize,
    pub seed: u64,
    pub augment: AugmentFlags,
    pub eval_every: usize,
    pub log_every: usize,
    /// Similarity-loss weight for distillation; `None` picks 1000/|pairs|.
    pub lambda: Option<f64>,
    /// Adds `wall_ms` to metric records, which makes them run-dependent.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            base_lr: 0.1,
            lr_decay_iters: vec![40_000, 60_000],
            lr_decay_factor: 10.0,
            momentum: 0.9,
            weight_decay: 1e-5,
            total_iters: 80_000,
            seed: 0,
            augment: AugmentFlags { crop: true, flip: true },
            eval_every: 500,
            log_every: 100,
            lambda: None,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    /// Short schedule for subsets and synthetic data.
    pub fn desk() -> Self {
        Self {
            total_iters: 3_000,
            lr_decay_iters: vec![1_500, 2_250],
            log_every: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad("lr_decay_factor must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.lr_decay_iters.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lr_decay_iters must be strictly increasing");
        }
        if self.total_iters == 0 || self.eval_every == 0 || self.log_every == 0 {
            return bad("total_iters, eval_every and log_every must be positive");
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return bad("lambda must be non-negative");
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: usize) -> f64 {
        lr_at(iter, self.base_lr, &self.lr_decay_iters, self.lr_decay_factor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::desk().validate().unwrap();
        assert_eq!(TrainConfig::default().lr_at(40_000), 0.1 / 10.0);
    }

    #[test]
    fn rejects_bad_values() {
        let cases = [
            TrainConfig { lr_decay_iters: vec![5, 5], ..TrainConfig::default() },
            TrainConfig { lr_decay_iters: vec![9, 3], ..TrainConfig::default() },
            TrainConfig { base_lr: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { momentum: 1.0, ..TrainConfig::default() },
            TrainConfig { lambda: Some(-1.0), ..TrainConfig::default() },
        ];
        for c in cases {
            assert!(matches!(c.validate(), Err(TrainError::Config(_))), "{c:?}");
        }
    }
}
