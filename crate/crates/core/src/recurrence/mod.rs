//! Weight-tied recurrence over BRC units.

mod schedule;
mod student;

pub use schedule::{make_schedule, ScheduleEntry, TyingSchedule, UnitId};
pub use student::{build_student, build_teacher, unroll_group, StudentGroup, StudentNetwork};
