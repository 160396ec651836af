use std::fmt;

use crate::nn::{ModelError, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnitId {
    A,
    B,
}

impl UnitId {
    pub fn index(self) -> usize {
        match self {
            UnitId::A => 0,
            UnitId::B => 1,
        }
    }

    pub fn label(self) -> char {
        match self {
            UnitId::A => 'A',
            UnitId::B => 'B',
        }
    }
}

/// One timestep: which unit runs, and which of its BN bank entries it uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub unit: UnitId,
    pub bank_index: usize,
}

impl fmt::Display for ScheduleEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.unit.label(), self.bank_index)
    }
}

/// Ordered assignment of tied units to timesteps within one group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TyingSchedule {
    variant: Variant,
    n: usize,
    pub(crate) entries: Vec<ScheduleEntry>,
}

pub fn make_schedule(variant: Variant, n: usize) -> Result<TyingSchedule, ModelError> {
    if n < 1 {
        return Err(ModelError::Recurrence(n));
    }
    let units: Vec<UnitId> = match variant {
        Variant::ReResNet1 => (0..2 * n + 1)
            .map(|t| if t % 2 == 0 { UnitId::A } else { UnitId::B })
            .collect(),
        Variant::ReResNet2 => std::iter::repeat_n(UnitId::A, n)
            .chain(std::iter::repeat_n(UnitId::B, n))
            .collect(),
        Variant::ReResNet3 => vec![UnitId::A; n],
    };
    let mut seen = [0usize; 2];
    let entries = units
        .into_iter()
        .map(|unit| {
            let bank_index = seen[unit.index()];
            seen[unit.index()] += 1;
            ScheduleEntry { unit, bank_index }
        })
        .collect();
    Ok(TyingSchedule { variant, n, entries })
}

impl TyingSchedule {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn recurrence(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of applications of `unit`.
    pub fn uses(&self, unit: UnitId) -> usize {
        self.entries.iter().filter(|e| e.unit == unit).count()
    }

    /// 1-based timesteps at which `unit` runs.
    pub fn timesteps(&self, unit: UnitId) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.unit == unit)
            .map(|(t, _)| t + 1)
            .collect()
    }

    /// Unit labels separated by spaces, e.g. `A B A B A`.
    pub fn timeline(&self) -> String {
        self.entries
            .iter()
            .map(|e| e.unit.label().to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
}
