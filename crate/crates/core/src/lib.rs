//! Knowledge distillation from wide residual teachers into compact students
//! whose residual blocks are replaced by weight-tied recurrent BRC units.

pub mod tensor;
pub mod nn;
pub mod rng;
pub mod recurrence;
pub mod distill;
pub mod verify;
pub mod data;
pub mod train;
