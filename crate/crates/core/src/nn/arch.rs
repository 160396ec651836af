use std::fmt;
use std::str::FromStr;

use super::error::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Teacher,
    Student,
}

/// How the two BRC units of a residual block are tied over time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Interleaved: A at odd steps, B at even steps.
    ReResNet1,
    /// Sequential: A for n steps, then B for n steps.
    ReResNet2,
    /// One unit recurred n times.
    ReResNet3,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::ReResNet1, Variant::ReResNet2, Variant::ReResNet3];

    pub fn number(self) -> u8 {
        match self {
            Variant::ReResNet1 => 1,
            Variant::ReResNet2 => 2,
            Variant::ReResNet3 => 3,
        }
    }

    pub fn units(self) -> usize {
        match self {
            Variant::ReResNet3 => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ReResNet-{}", self.number())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().trim_start_matches("reresnet").trim_start_matches('-') {
            "1" => Ok(Variant::ReResNet1),
            "2" => Ok(Variant::ReResNet2),
            "3" => Ok(Variant::ReResNet3),
            other => Err(format!("unknown variant '{other}' (expected 1, 2 or 3)")),
        }
    }
}

/// Topology of a teacher or student network.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub role: Role,
    pub in_channels: usize,
    pub stem_channels: usize,
    pub group_widths: Vec<usize>,
    /// Teacher only.
    pub blocks_per_group: usize,
    /// Student only.
    pub variant: Variant,
    /// Student only.
    pub recurrence: usize,
    pub num_classes: usize,
}

pub const TEACHER_WIDTHS: [usize; 3] = [32, 64, 128];
pub const TEACHER_BLOCKS: usize = 3;

impl ArchSpec {
    pub fn teacher(blocks_per_group: usize, num_classes: usize) -> Self {
        Self::teacher_with_widths(&TEACHER_WIDTHS, blocks_per_group, num_classes)
    }

    pub fn teacher_with_widths(widths: &[usize], blocks_per_group: usize, num_classes: usize) -> Self {
        Self {
            role: Role::Teacher,
            in_channels: 3,
            stem_channels: widths.first().copied().unwrap_or(0),
            group_widths: widths.to_vec(),
            blocks_per_group,
            variant: Variant::ReResNet1,
            recurrence: 0,
            num_classes,
        }
    }

    /// Student at half the teacher's widths.
    pub fn student_of(teacher: &ArchSpec, variant: Variant, recurrence: usize) -> Self {
        let widths: Vec<usize> = teacher.group_widths.iter().map(|w| w / 2).collect();
        Self {
            role: Role::Student,
            in_channels: teacher.in_channels,
            stem_channels: widths.first().copied().unwrap_or(0),
            group_widths: widths,
            blocks_per_group: 0,
            variant,
            recurrence,
            num_classes: teacher.num_classes,
        }
    }

    /// Student of the default teacher: widths [16, 32, 64].
    pub fn student(variant: Variant, recurrence: usize, num_classes: usize) -> Self {
        Self::student_of(&Self::teacher(TEACHER_BLOCKS, num_classes), variant, recurrence)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidArch(msg));
        if self.group_widths.is_empty() || self.group_widths.contains(&0) {
            return bad(format!("group widths {:?} must be non-empty and positive", self.group_widths));
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.in_channels == 0 || self.stem_channels == 0 {
            return bad("input and stem channels must be positive".into());
        }
        match self.role {
            Role::Teacher if self.blocks_per_group == 0 => bad("teacher needs at least one block per group".into()),
            Role::Student => {
                if self.recurrence < 1 {
                    return Err(ModelError::Recurrence(self.recurrence));
                }
                if self.stem_channels != self.group_widths[0] {
                    return bad(format!(
                        "student stem width {} must equal first group width {}",
                        self.stem_channels, self.group_widths[0]
                    ));
                }
                Ok(())
            }
            Role::Teacher => Ok(()),
        }
    }

    /// Checks that `self` (a student) is exactly half as wide as `teacher`.
    pub fn check_half_width_of(&self, teacher: &ArchSpec) -> Result<(), ModelError> {
        let halves: Vec<usize> = teacher.group_widths.iter().map(|w| w / 2).collect();
        if teacher.group_widths.iter().any(|w| w % 2 != 0) || halves != self.group_widths {
            return Err(ModelError::InvalidArch(format!(
                "student widths {:?} are not half of teacher widths {:?}",
                self.group_widths, teacher.group_widths
            )));
        }
        Ok(())
    }
}
