//! Command-line driver: parameter reports, tying timelines, gradient
//! verification, teacher training, distillation and evaluation.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_distill, cmd_eval, cmd_gradcheck, cmd_params, cmd_schedule, cmd_train_teacher, load_data, ArtifactPaths,
    EvalReport, Role,
};
pub use config::{DatasetKind, Precision, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Failure,
    Usage,
    Config,
    Data,
    Check,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            Self::Failure => 1,
            Self::Usage => 2,
            Self::Config => 3,
            Self::Data => 4,
            Self::Check => 5,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Config, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<rrkd_core::train::TrainError> for CliError {
    fn from(e: rrkd_core::train::TrainError) -> Self {
        use rrkd_core::train::TrainError as E;
        let kind = match &e {
            E::Config(_) => ExitKind::Config,
            E::Data(_) | E::Checkpoint(_) | E::Io { .. } => ExitKind::Data,
            _ => ExitKind::Failure,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<rrkd_core::nn::ModelError> for CliError {
    fn from(e: rrkd_core::nn::ModelError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(ExitKind::Failure, e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "rrkd", version, about = "Distil wide residual teachers into weight-tied recurrent students")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every configurable command. Flags override the file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Flat key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for checkpoints, metrics and the resolved config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = ["f32", "f64"])]
    pub precision: Option<String>,
    /// Student tying variant: 1, 2 or 3.
    #[arg(long)]
    pub variant: Option<String>,
    /// Recurrence steps per group.
    #[arg(long)]
    pub recurs: Option<usize>,
    /// Similarity-loss weight, or `auto`.
    #[arg(long)]
    pub lambda: Option<String>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(CliError::config)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("precision", self.precision.clone()),
            ("variant", self.variant.clone()),
            ("recurs", self.recurs.map(|v| v.to_string())),
            ("lambda", self.lambda.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v).map_err(|e| CliError::config(format!("--{key}: {e}")))?;
            }
        }
        cfg.validate().map_err(CliError::config)?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the parameter table of the configured student or teacher.
    Params {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_enum, default_value = "student")]
        role: Role,
        /// Emit a Markdown table.
        #[arg(long)]
        markdown: bool,
    },
    /// Print the unit timeline of one recurrent group.
    Schedule {
        #[arg(long)]
        variant: String,
        #[arg(long)]
        recurs: usize,
    },
    /// Run the finite-difference and shared-gradient checks in f64.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scale the backward pass of one op, to exercise the harness.
        #[arg(long, hide = true)]
        corrupt_backward: Option<String>,
    },
    /// Train the teacher from scratch.
    TrainTeacher {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train a student against a frozen teacher checkpoint.
    Distill {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Evaluate a teacher or student checkpoint on the test split.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Runs one parsed command, writing reports to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cli.command {
        Command::Params {
            overrides,
            role,
            markdown,
        } => cmd_params(&overrides.resolve()?, role, markdown, out),
        Command::Schedule { variant, recurs } => {
            let variant = variant.parse().map_err(|e: String| CliError::new(ExitKind::Usage, e))?;
            cmd_schedule(variant, recurs, out)
        }
        Command::Gradcheck { seed, corrupt_backward } => {
            let corrupt = corrupt_backward
                .map(|s| s.parse())
                .transpose()
                .map_err(|e: String| CliError::new(ExitKind::Usage, e))?;
            cmd_gradcheck(seed, corrupt, out)
        }
        Command::TrainTeacher { overrides } => cmd_train_teacher(&overrides.resolve()?, out).map(drop),
        Command::Distill { overrides, teacher } => cmd_distill(&overrides.resolve()?, &teacher, out).map(drop),
        Command::Eval { overrides, checkpoint } => cmd_eval(&overrides.resolve()?, &checkpoint, out).map(drop),
    }
}
