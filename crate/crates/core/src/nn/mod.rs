//! Building blocks shared by teacher and student networks.

mod arch;
mod blocks;
mod count;
mod error;
mod init;
mod teacher;

pub use arch::{ArchSpec, Role, Variant, TEACHER_BLOCKS, TEACHER_WIDTHS};
pub use blocks::{brc_forward, residual_step, stem_forward, BnSite, BrcUnit, ClassifierHead, TransitionConv};
pub use count::{count_parameters, unit_uses, LayerCount, ParamCount};
pub use error::ModelError;
pub use init::{fan_in, he_init};
pub use teacher::TeacherNetwork;

use crate::tensor::{BnMode, Element, ParamStore, Tape, Var};

/// Logits plus the activation at the end of every spatial group.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    pub group_outputs: Vec<Var>,
}

/// A network that owns its parameter registry.
pub trait Network<T: Element> {
    fn arch(&self) -> &ArchSpec;

    fn store(&self) -> &ParamStore<T>;

    fn store_mut(&mut self) -> &mut ParamStore<T>;

    /// Records the forward pass of an N×C×H×W batch on `tape`. Train mode
    /// updates BN running statistics.
    fn forward(&mut self, tape: &mut Tape<T>, input: Var, mode: BnMode) -> Result<ForwardOutput, ModelError>;
}
