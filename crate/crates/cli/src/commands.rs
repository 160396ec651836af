use std::io::Write;
use std::path::{Path, PathBuf};

use rrkd_core::data::{load_cifar10, subset, synthetic_dataset_with_noise, Dataset, Split};
use rrkd_core::nn::{count_parameters, Network, Variant};
use rrkd_core::recurrence::{build_student, build_teacher, make_schedule};
use rrkd_core::rng::{stream, Stream};
use rrkd_core::tensor::{Element, OpKind};
use rrkd_core::train::{distill_student, evaluate, standardize, train_teacher, Accuracy, Checkpoint, CheckpointError, TrainError};
use rrkd_core::verify::{gradcheck_suite, shared_gradient_suite};

use crate::config::{DatasetKind, Precision, RunConfig};
use crate::{CliError, ExitKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Role {
    Student,
    Teacher,
}

impl Role {
    fn label(self) -> &'static str {
        match self {
            Role::Student => "student",
            Role::Teacher => "teacher",
        }
    }
}

pub fn cmd_params(cfg: &RunConfig, role: Role, markdown: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let arch = match role {
        Role::Student => cfg.student_arch(),
        Role::Teacher => cfg.teacher_arch(),
    };
    let count = count_parameters(&arch)?;
    if markdown {
        write!(out, "{}", count.to_markdown())?;
    } else {
        match role {
            Role::Student => writeln!(out, "{} student, n = {}, widths {:?}", arch.variant, arch.recurrence, arch.group_widths)?,
            Role::Teacher => writeln!(
                out,
                "teacher, {} blocks per group, widths {:?}",
                arch.blocks_per_group, arch.group_widths
            )?,
        }
        write!(out, "{}", count.to_table())?;
    }
    Ok(())
}

pub fn cmd_schedule(variant: Variant, recurs: usize, out: &mut dyn Write) -> Result<(), CliError> {
    let schedule = make_schedule(variant, recurs).map_err(|e| CliError::new(ExitKind::Usage, e.to_string()))?;
    writeln!(out, "{}", schedule.timeline())?;
    Ok(())
}

pub fn cmd_gradcheck(seed: u64, corrupt: Option<OpKind>, out: &mut dyn Write) -> Result<(), CliError> {
    let mut reports = gradcheck_suite(seed, corrupt)?;
    reports.extend(shared_gradient_suite(seed)?);
    for r in &reports {
        writeln!(out, "{r}")?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    writeln!(out, "{}/{} checks passed", reports.len() - failed.len(), reports.len())?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(ExitKind::Check, format!("gradient checks failed: {}", failed.join(", "))))
    }
}

/// Loads the configured dataset and standardizes both splits with training
/// statistics.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    let data_err = |e: rrkd_core::data::DataError| CliError::new(ExitKind::Data, e.to_string());
    let (train, test) = match cfg.dataset {
        DatasetKind::Synthetic => {
            let make = |seed, per_class, split| {
                synthetic_dataset_with_noise(
                    seed,
                    per_class,
                    cfg.synthetic_classes,
                    cfg.synthetic_image_size,
                    cfg.synthetic_noise,
                    split,
                )
            };
            (
                make(2 * cfg.data_seed, cfg.synthetic_train_per_class, Split::Train),
                make(2 * cfg.data_seed + 1, cfg.synthetic_test_per_class, Split::Test),
            )
        }
        DatasetKind::Cifar10 => {
            let (train, test) = load_cifar10(&cfg.data_dir).map_err(data_err)?;
            if cfg.subset_classes.is_empty() {
                (train, test)
            } else {
                (
                    subset(&train, &cfg.subset_classes, cfg.subset_train_per_class, cfg.data_seed).map_err(data_err)?,
                    subset(&test, &cfg.subset_classes, cfg.subset_test_per_class, cfg.data_seed).map_err(data_err)?,
                )
            }
        }
    };
    let (train, test, _) = standardize(&train, &test);
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArtifactPaths {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub config: PathBuf,
}

impl ArtifactPaths {
    fn new(cfg: &RunConfig, role: Role) -> Result<Self, CliError> {
        std::fs::create_dir_all(&cfg.out)
            .map_err(|e| CliError::new(ExitKind::Failure, format!("{}: {e}", cfg.out.display())))?;
        let stem = role.label();
        let paths = Self {
            checkpoint: cfg.out.join(format!("{stem}.ckpt")),
            metrics: cfg.out.join(format!("{stem}.metrics.jsonl")),
            config: cfg.out.join(format!("{stem}.cfg")),
        };
        std::fs::write(&paths.config, cfg.to_text())
            .map_err(|e| CliError::new(ExitKind::Failure, format!("{}: {e}", paths.config.display())))?;
        Ok(paths)
    }
}

pub fn cmd_train_teacher(cfg: &RunConfig, out: &mut dyn Write) -> Result<ArtifactPaths, CliError> {
    let (train, test) = load_data(cfg)?;
    let paths = ArtifactPaths::new(cfg, Role::Teacher)?;
    let acc = match cfg.precision {
        Precision::F32 => teacher_phase::<f32>(cfg, &train, &test, &paths)?,
        Precision::F64 => teacher_phase::<f64>(cfg, &train, &test, &paths)?,
    };
    report_phase(out, "teacher", acc, &paths)?;
    Ok(paths)
}

fn teacher_phase<T: Element>(cfg: &RunConfig, train: &Dataset, test: &Dataset, paths: &ArtifactPaths) -> Result<Option<f64>, CliError> {
    let run = train_teacher::<T>(&cfg.teacher_arch(), &cfg.train, train, test)?;
    Checkpoint::from_store(run.network.store()).save(&paths.checkpoint).map_err(TrainError::from)?;
    run.metrics.write(&paths.metrics)?;
    Ok(run.metrics.last_test_acc())
}

pub fn cmd_distill(cfg: &RunConfig, teacher: &Path, out: &mut dyn Write) -> Result<ArtifactPaths, CliError> {
    let teacher_ckpt = Checkpoint::load(teacher).map_err(TrainError::from)?;
    let (train, test) = load_data(cfg)?;
    let paths = ArtifactPaths::new(cfg, Role::Student)?;
    let acc = match cfg.precision {
        Precision::F32 => student_phase::<f32>(cfg, &teacher_ckpt, &train, &test, &paths)?,
        Precision::F64 => student_phase::<f64>(cfg, &teacher_ckpt, &train, &test, &paths)?,
    };
    report_phase(out, "student", acc, &paths)?;
    Ok(paths)
}

fn student_phase<T: Element>(
    cfg: &RunConfig,
    teacher_ckpt: &Checkpoint,
    train: &Dataset,
    test: &Dataset,
    paths: &ArtifactPaths,
) -> Result<Option<f64>, CliError> {
    let mut teacher = build_teacher::<T, _>(&cfg.teacher_arch(), &mut stream(cfg.seed, Stream::Init))?;
    teacher_ckpt.restore_into(teacher.store_mut()).map_err(TrainError::from)?;
    let run = distill_student(&cfg.student_arch(), &mut teacher, &cfg.train, train, test)?;
    Checkpoint::from_store(run.network.store()).save(&paths.checkpoint).map_err(TrainError::from)?;
    run.metrics.write(&paths.metrics)?;
    Ok(run.metrics.last_test_acc())
}

fn report_phase(out: &mut dyn Write, role: &str, acc: Option<f64>, paths: &ArtifactPaths) -> Result<(), CliError> {
    if let Some(a) = acc {
        writeln!(out, "{role}: final test top-1 {a:.4}")?;
    }
    writeln!(out, "checkpoint {}", paths.checkpoint.display())?;
    writeln!(out, "metrics {}", paths.metrics.display())?;
    writeln!(out, "config {}", paths.config.display())?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub role: Role,
    pub accuracy: Accuracy,
}

/// Evaluates on the test split. The checkpoint is matched against the
/// configured teacher first, then the configured student.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: &mut dyn Write) -> Result<EvalReport, CliError> {
    let ckpt = Checkpoint::load(checkpoint).map_err(TrainError::from)?;
    let (_, test) = load_data(cfg)?;
    let report = match cfg.precision {
        Precision::F32 => eval_phase::<f32>(cfg, &ckpt, &test)?,
        Precision::F64 => eval_phase::<f64>(cfg, &ckpt, &test)?,
    };
    writeln!(out, "{} checkpoint, {} test images", report.role.label(), report.accuracy.samples)?;
    writeln!(out, "top-1 {:.4}", report.accuracy.top1)?;
    if let Some(t5) = report.accuracy.top5 {
        writeln!(out, "top-5 {t5:.4}")?;
    }
    Ok(report)
}

fn eval_phase<T: Element>(cfg: &RunConfig, ckpt: &Checkpoint, test: &Dataset) -> Result<EvalReport, CliError> {
    let mut rng = stream(cfg.seed, Stream::Init);
    let mut teacher = build_teacher::<T, _>(&cfg.teacher_arch(), &mut rng)?;
    let teacher_err = match ckpt.restore_into(teacher.store_mut()) {
        Ok(()) => {
            let accuracy = evaluate(&mut teacher, test)?;
            return Ok(EvalReport { role: Role::Teacher, accuracy });
        }
        Err(e) => e,
    };
    let mut student = build_student::<T, _>(&cfg.student_arch(), &mut rng)?;
    match ckpt.restore_into(student.store_mut()) {
        Ok(()) => {
            let accuracy = evaluate(&mut student, test)?;
            Ok(EvalReport { role: Role::Student, accuracy })
        }
        Err(CheckpointError::Unexpected(_) | CheckpointError::Missing(_)) => Err(CliError::new(
            ExitKind::Data,
            format!("checkpoint matches neither the configured teacher ({teacher_err}) nor the student"),
        )),
        Err(e) => Err(TrainError::from(e).into()),
    }
}
