//! Pre-activation wide residual teacher.

use rand::Rng;

use super::arch::{ArchSpec, Role};
use super::blocks::{residual_step, stem_forward, BnSite, ClassifierHead};
use super::error::ModelError;
use super::init::he_init;
use super::{ForwardOutput, Network};
use crate::tensor::{BnMode, Element, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Debug)]
struct PreActBlock {
    bn1: BnSite,
    conv1: ParamId,
    bn2: BnSite,
    conv2: ParamId,
    shortcut: Option<ParamId>,
    stride: usize,
}

impl PreActBlock {
    fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: BnMode,
    ) -> Result<Var, ModelError> {
        let body = |tape: &mut Tape<T>, store: &mut ParamStore<T>, a: Var| -> Result<Var, ModelError> {
            let k1 = tape.param(store, self.conv1);
            let h = tape.conv2d(a, k1, self.stride, 1)?;
            let h = self.bn2.forward(tape, store, h, mode)?;
            let h = tape.relu(h)?;
            let k2 = tape.param(store, self.conv2);
            Ok(tape.conv2d(h, k2, 1, 1)?)
        };
        match self.shortcut {
            None => residual_step(tape, x, |tape, x| {
                let a = self.bn1.forward(tape, store, x, mode)?;
                let a = tape.relu(a)?;
                body(tape, store, a)
            }),
            Some(proj) => {
                let a = self.bn1.forward(tape, store, x, mode)?;
                let a = tape.relu(a)?;
                let k = tape.param(store, proj);
                let skip = tape.conv2d(a, k, self.stride, 0)?;
                let h = body(tape, store, a)?;
                Ok(tape.add(h, skip)?)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TeacherNetwork<T> {
    arch: ArchSpec,
    stem: ParamId,
    groups: Vec<Vec<PreActBlock>>,
    head: ClassifierHead,
    store: ParamStore<T>,
}

impl<T: Element> TeacherNetwork<T> {
    /// He-initialized teacher; parameter names follow [`super::count_parameters`].
    pub fn build<R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> Result<Self, ModelError> {
        arch.validate()?;
        if arch.role != Role::Teacher {
            return Err(ModelError::InvalidArch("teacher builder given a student spec".into()));
        }
        let mut store = ParamStore::new();
        let stem_shape = [arch.stem_channels, arch.in_channels, 3, 3];
        let stem = store.add("stem.conv", he_init(&stem_shape, arch.in_channels * 9, rng))?;
        let mut c_in = arch.stem_channels;
        let mut groups = Vec::new();
        for (g, &w) in arch.group_widths.iter().enumerate() {
            let mut blocks = Vec::new();
            for b in 0..arch.blocks_per_group {
                let name = format!("g{}.b{}", g + 1, b + 1);
                let stride = if b == 0 && g > 0 { 2 } else { 1 };
                let bn1 = BnSite::new(&mut store, &format!("{name}.bn1"), c_in)?;
                let conv1 = store.add(format!("{name}.conv1"), he_init(&[w, c_in, 3, 3], c_in * 9, rng))?;
                let bn2 = BnSite::new(&mut store, &format!("{name}.bn2"), w)?;
                let conv2 = store.add(format!("{name}.conv2"), he_init(&[w, w, 3, 3], w * 9, rng))?;
                let shortcut = if c_in != w || stride != 1 {
                    Some(store.add(format!("{name}.shortcut"), he_init(&[w, c_in, 1, 1], c_in, rng))?)
                } else {
                    None
                };
                blocks.push(PreActBlock {
                    bn1,
                    conv1,
                    bn2,
                    conv2,
                    shortcut,
                    stride,
                });
                c_in = w;
            }
            groups.push(blocks);
        }
        let head = ClassifierHead::new(&mut store, c_in, arch.num_classes, rng)?;
        Ok(Self {
            arch: arch.clone(),
            stem,
            groups,
            head,
            store,
        })
    }
}

impl<T: Element> Network<T> for TeacherNetwork<T> {
    fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn forward(&mut self, tape: &mut Tape<T>, input: Var, mode: BnMode) -> Result<ForwardOutput, ModelError> {
        let store = &mut self.store;
        let mut x = stem_forward(tape, store, self.stem, input)?;
        let mut group_outputs = Vec::with_capacity(self.groups.len());
        for blocks in &self.groups {
            for block in blocks {
                x = block.forward(tape, store, x, mode)?;
            }
            group_outputs.push(x);
        }
        let logits = self.head.forward(tape, store, x, mode)?;
        Ok(ForwardOutput { logits, group_outputs })
    }
}
