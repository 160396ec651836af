//! Flat `key = value` run configuration. `#` starts a comment; unknown and
//! repeated keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rrkd_core::nn::{ArchSpec, Variant};
use rrkd_core::train::{AugmentFlags, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            _ => Err(format!("expected f32 or f64, got {s:?}")),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Cifar10,
    Synthetic,
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cifar10" => Ok(Self::Cifar10),
            "synthetic" => Ok(Self::Synthetic),
            _ => Err(format!("expected cifar10 or synthetic, got {s:?}")),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cifar10 => "cifar10",
            Self::Synthetic => "synthetic",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub out: PathBuf,

    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub data_seed: u64,
    /// Empty keeps every class.
    pub subset_classes: Vec<usize>,
    pub subset_train_per_class: usize,
    pub subset_test_per_class: usize,
    pub synthetic_classes: usize,
    pub synthetic_train_per_class: usize,
    pub synthetic_test_per_class: usize,
    pub synthetic_image_size: usize,
    pub synthetic_noise: f64,

    pub teacher_widths: Vec<usize>,
    pub teacher_blocks: usize,
    pub variant: Variant,
    pub recurs: usize,

    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F32,
            out: PathBuf::from("runs"),
            dataset: DatasetKind::Cifar10,
            data_dir: PathBuf::from("data/cifar-10-batches-bin"),
            data_seed: 0,
            subset_classes: Vec::new(),
            subset_train_per_class: 0,
            subset_test_per_class: 0,
            synthetic_classes: 4,
            synthetic_train_per_class: 100,
            synthetic_test_per_class: 50,
            synthetic_image_size: 32,
            synthetic_noise: rrkd_core::data::SYNTHETIC_NOISE,
            teacher_widths: rrkd_core::nn::TEACHER_WIDTHS.to_vec(),
            teacher_blocks: rrkd_core::nn::TEACHER_BLOCKS,
            variant: Variant::ReResNet3,
            recurs: 3,
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
}

fn parse_list(v: &str) -> Result<Vec<usize>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse::<usize>)
        .collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "seed" => {
                self.seed = parse(v)?;
                t.seed = self.seed;
            }
            "precision" => self.precision = parse(v)?,
            "out" => self.out = PathBuf::from(v),
            "dataset" => self.dataset = parse(v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "data_seed" => self.data_seed = parse(v)?,
            "subset_classes" => self.subset_classes = parse_list(v)?,
            "subset_train_per_class" => self.subset_train_per_class = parse(v)?,
            "subset_test_per_class" => self.subset_test_per_class = parse(v)?,
            "synthetic_classes" => self.synthetic_classes = parse(v)?,
            "synthetic_train_per_class" => self.synthetic_train_per_class = parse(v)?,
            "synthetic_test_per_class" => self.synthetic_test_per_class = parse(v)?,
            "synthetic_image_size" => self.synthetic_image_size = parse(v)?,
            "synthetic_noise" => self.synthetic_noise = parse(v)?,
            "teacher_widths" => self.teacher_widths = parse_list(v)?,
            "teacher_blocks" => self.teacher_blocks = parse(v)?,
            "variant" => self.variant = parse(v)?,
            "recurs" => self.recurs = parse(v)?,
            "batch_size" => t.batch_size = parse(v)?,
            "base_lr" => t.base_lr = parse(v)?,
            "lr_decay_iters" => t.lr_decay_iters = parse_list(v)?,
            "lr_decay_factor" => t.lr_decay_factor = parse(v)?,
            "momentum" => t.momentum = parse(v)?,
            "weight_decay" => t.weight_decay = parse(v)?,
            "total_iters" => t.total_iters = parse(v)?,
            "eval_every" => t.eval_every = parse(v)?,
            "log_every" => t.log_every = parse(v)?,
            "augment_crop" => t.augment.crop = parse(v)?,
            "augment_flip" => t.augment.flip = parse(v)?,
            "lambda" => t.lambda = if v == "auto" { None } else { Some(parse(v)?) },
            "log_wall_time" => t.log_wall_time = parse(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let AugmentFlags { crop, flip } = t.augment;
        vec![
            ("seed", self.seed.to_string()),
            ("precision", self.precision.to_string()),
            ("out", self.out.display().to_string()),
            ("dataset", self.dataset.to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("subset_classes", list(&self.subset_classes)),
            ("subset_train_per_class", self.subset_train_per_class.to_string()),
            ("subset_test_per_class", self.subset_test_per_class.to_string()),
            ("synthetic_classes", self.synthetic_classes.to_string()),
            ("synthetic_train_per_class", self.synthetic_train_per_class.to_string()),
            ("synthetic_test_per_class", self.synthetic_test_per_class.to_string()),
            ("synthetic_image_size", self.synthetic_image_size.to_string()),
            ("synthetic_noise", self.synthetic_noise.to_string()),
            ("teacher_widths", list(&self.teacher_widths)),
            ("teacher_blocks", self.teacher_blocks.to_string()),
            ("variant", self.variant.number().to_string()),
            ("recurs", self.recurs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("base_lr", t.base_lr.to_string()),
            ("lr_decay_iters", list(&t.lr_decay_iters)),
            ("lr_decay_factor", t.lr_decay_factor.to_string()),
            ("momentum", t.momentum.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("total_iters", t.total_iters.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("log_every", t.log_every.to_string()),
            ("augment_crop", crop.to_string()),
            ("augment_flip", flip.to_string()),
            ("lambda", t.lambda.map_or("auto".to_string(), |l| l.to_string())),
            ("log_wall_time", t.log_wall_time.to_string()),
        ]
    }

    /// Applies `text` on top of the defaults. Errors carry the line number.
    pub fn parse_text(text: &str) -> Result<Self, String> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let n = i + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {n}: expected `key = value`, got {line:?}"))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(format!("line {n}: key {key:?} given twice"));
            }
            cfg.set(key, value).map_err(|e| format!("line {n}: {key}: {e}"))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse_text(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn teacher_arch(&self) -> ArchSpec {
        ArchSpec::teacher_with_widths(&self.teacher_widths, self.teacher_blocks, self.num_classes())
    }

    pub fn student_arch(&self) -> ArchSpec {
        ArchSpec::student_of(&self.teacher_arch(), self.variant, self.recurs)
    }

    pub fn num_classes(&self) -> usize {
        match self.dataset {
            DatasetKind::Synthetic => self.synthetic_classes,
            DatasetKind::Cifar10 if self.subset_classes.is_empty() => 10,
            DatasetKind::Cifar10 => self.subset_classes.len(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.train.validate().map_err(|e| e.to_string())?;
        self.teacher_arch().validate().map_err(|e| e.to_string())?;
        self.student_arch().validate().map_err(|e| e.to_string())?;
        if self.train.seed != self.seed {
            return Err("internal: training seed out of sync".into());
        }
        Ok(())
    }
}
