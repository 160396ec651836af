//! Dense tensors and tape-based reverse-mode differentiation.

mod array;
mod conv;
mod element;
mod error;
mod norm;
mod params;
mod tape;

pub use array::Tensor;
pub use element::{DType, Element};
pub use error::TensorError;
pub use norm::{BnMode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use params::{ParamId, ParamStore, Parameter, RegistryError, StatsId};
pub use tape::{Gradients, OpKind, Tape, Var};
