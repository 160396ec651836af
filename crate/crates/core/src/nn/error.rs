use thiserror::Error;

use crate::tensor::{RegistryError, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("unit {unit}: bank index {index} out of range (bank holds {len} entries)")]
    BankIndex { unit: String, index: usize, len: usize },
    #[error("residual body changed shape from {before:?} to {after:?}")]
    ResidualShape { before: Vec<usize>, after: Vec<usize> },
    #[error("expected {expected} input channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("recurrence count must be at least 1, got {0}")]
    Recurrence(usize),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("group count mismatch: student has {student}, teacher has {teacher}")]
    GroupMismatch { student: usize, teacher: usize },
    #[error("layer pair {pair}: student map {student:?} and teacher map {teacher:?} differ spatially")]
    PairMismatch {
        pair: usize,
        student: Vec<usize>,
        teacher: Vec<usize>,
    },
}
