//! Student network: per spatial group, a tied BRC unroll.

use rand::Rng;

use super::schedule::{make_schedule, TyingSchedule};
use crate::nn::{
    brc_forward, he_init, residual_step, stem_forward, ArchSpec, BrcUnit, ClassifierHead, ForwardOutput, ModelError,
    Network, Role, TeacherNetwork, TransitionConv,
};
use crate::tensor::{BnMode, Element, ParamId, ParamStore, Tape, Var};

/// Fold `x ← brc(unit, x, bank) + x` over the schedule, recording every
/// application on `tape`. Gradients of a tied kernel therefore come back
/// summed over all of its timesteps.
pub fn unroll_group<T: Element>(
    units: &[BrcUnit],
    schedule: &TyingSchedule,
    tape: &mut Tape<T>,
    store: &mut ParamStore<T>,
    x: Var,
    mode: BnMode,
) -> Result<Var, ModelError> {
    let expected = units.first().map(|u| u.channels).unwrap_or(0);
    let got = tape.shape(x).get(1).copied().unwrap_or(0);
    if expected != got {
        return Err(ModelError::ChannelMismatch { expected, got });
    }
    schedule.entries().iter().try_fold(x, |h, entry| {
        let unit = units.get(entry.unit.index()).ok_or_else(|| {
            ModelError::InvalidArch(format!("schedule names unit {} but the group has {}", entry.unit.label(), units.len()))
        })?;
        residual_step(tape, h, |tape, h| brc_forward(unit, tape, store, h, entry.bank_index, mode))
    })
}

#[derive(Clone, Debug)]
pub struct StudentGroup {
    pub units: Vec<BrcUnit>,
    pub schedule: TyingSchedule,
}

#[derive(Clone, Debug)]
pub struct StudentNetwork<T> {
    arch: ArchSpec,
    stem: ParamId,
    groups: Vec<StudentGroup>,
    /// `transitions[g]` feeds group `g + 1`.
    transitions: Vec<TransitionConv>,
    head: ClassifierHead,
    store: ParamStore<T>,
}

impl<T: Element> StudentNetwork<T> {
    pub fn build<R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> Result<Self, ModelError> {
        arch.validate()?;
        if arch.role != Role::Student {
            return Err(ModelError::InvalidArch("student builder given a teacher spec".into()));
        }
        let mut store = ParamStore::new();
        let stem_shape = [arch.stem_channels, arch.in_channels, 3, 3];
        let stem = store.add("stem.conv", he_init(&stem_shape, arch.in_channels * 9, rng))?;
        let schedule = make_schedule(arch.variant, arch.recurrence)?;
        let mut groups = Vec::new();
        let mut transitions = Vec::new();
        for (g, &w) in arch.group_widths.iter().enumerate() {
            let group = g + 1;
            if g > 0 {
                let prev = arch.group_widths[g - 1];
                transitions.push(TransitionConv::new(&mut store, &format!("t{group}"), prev, w, rng)?);
            }
            let units = [super::UnitId::A, super::UnitId::B]
                .into_iter()
                .filter(|&u| schedule.uses(u) > 0)
                .map(|u| BrcUnit::new(&mut store, &format!("g{group}.{}", u.label()), w, schedule.uses(u), rng))
                .collect::<Result<Vec<_>, _>>()?;
            groups.push(StudentGroup {
                units,
                schedule: schedule.clone(),
            });
        }
        let head = ClassifierHead::new(&mut store, *arch.group_widths.last().unwrap(), arch.num_classes, rng)?;
        Ok(Self {
            arch: arch.clone(),
            stem,
            groups,
            transitions,
            head,
            store,
        })
    }

    pub fn groups(&self) -> &[StudentGroup] {
        &self.groups
    }

    /// Equal-valued copy in which every unit application owns a private
    /// kernel (`<unit>.conv@<bank>`). Its forward pass matches the tied
    /// network exactly; its per-copy gradients sum to the tied gradient.
    pub fn untied_clone(&self) -> Result<Self, ModelError> {
        let mut out = self.clone();
        for group in &mut out.groups {
            for unit in &mut group.units {
                *unit = unit.untie(&mut out.store)?;
            }
        }
        // the original shared kernels stay registered but unused
        for group in &self.groups {
            for unit in &group.units {
                out.store.param_mut(unit.kernels[0]).trainable = false;
            }
        }
        Ok(out)
    }

    /// Parameters whose single tensor is shared by more than one timestep,
    /// with the number of timesteps.
    pub fn shared_kernels(&self) -> Vec<(String, usize)> {
        self.groups
            .iter()
            .flat_map(|g| g.units.iter())
            .filter(|u| u.is_tied())
            .map(|u| (self.store.param(u.kernels[0]).name.clone(), u.bn_bank.len()))
            .collect()
    }
}

impl<T: Element> Network<T> for StudentNetwork<T> {
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
        for (g, group) in self.groups.iter().enumerate() {
            if g > 0 {
                x = self.transitions[g - 1].forward(tape, store, x, mode)?;
            }
            x = unroll_group(&group.units, &group.schedule, tape, store, x, mode)?;
            group_outputs.push(x);
        }
        let logits = self.head.forward(tape, store, x, mode)?;
        Ok(ForwardOutput { logits, group_outputs })
    }
}

pub fn build_student<T: Element, R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> Result<StudentNetwork<T>, ModelError> {
    StudentNetwork::build(arch, rng)
}

pub fn build_teacher<T: Element, R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> Result<TeacherNetwork<T>, ModelError> {
    TeacherNetwork::build(arch, rng)
}
