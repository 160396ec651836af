//! Datasets: CIFAR-10 binary batches, synthetic grating tasks and
//! class-balanced subsets. Images stay in [0, 1]; standardization and
//! augmentation happen in the training module.

mod cifar;
mod synthetic;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng::{stream, Stream};

pub use cifar::{load_cifar10, read_records, write_records, CIFAR_RECORDS_PER_FILE, CIFAR_RECORD_BYTES};
pub use synthetic::{nearest_template_accuracy, synthetic_dataset, synthetic_dataset_with_noise, template, SYNTHETIC_NOISE};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected {expected} bytes, found {actual}")]
    FileSize { path: PathBuf, expected: usize, actual: usize },
    #[error("{path}: label byte {label} at offset {offset} is not a class in 0..=9")]
    Label { path: PathBuf, offset: usize, label: u8 },
    #[error("class {class} has {available} samples, {requested} requested")]
    NotEnoughSamples {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("invalid dataset request: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// N images of 3×S×S values in [0, 1] with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub channels: usize,
    pub image_size: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        images: Vec<f32>,
        labels: Vec<usize>,
        num_classes: usize,
        channels: usize,
        image_size: usize,
        split: Split,
    ) -> Result<Self, DataError> {
        let per = channels * image_size * image_size;
        if per == 0 || images.len() != labels.len() * per {
            return Err(DataError::Invalid(format!(
                "{} image values for {} labels of {channels}x{image_size}x{image_size}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Invalid(format!("label {bad} outside {num_classes} classes")));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            channels,
            image_size,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.image_size * self.image_size
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let per = self.image_len();
        &self.images[i * per..(i + 1) * per]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    fn select(&self, indices: &[usize], relabel: impl Fn(usize) -> usize, num_classes: usize) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(relabel(self.labels[i]));
        }
        Dataset {
            images,
            labels,
            num_classes,
            channels: self.channels,
            image_size: self.image_size,
            split: self.split,
        }
    }
}

/// Indices of a class-balanced, seed-determined subsample: `n_per_class`
/// samples of each class in `classes_keep`, returned in ascending order.
pub fn subset_indices(
    dataset: &Dataset,
    classes_keep: &[usize],
    n_per_class: usize,
    seed: u64,
) -> Result<Vec<usize>, DataError> {
    if classes_keep.is_empty() {
        return Err(DataError::Invalid("no classes selected".into()));
    }
    let mut rng = stream(seed, Stream::Data);
    let mut picked = Vec::with_capacity(classes_keep.len() * n_per_class);
    for &class in classes_keep {
        if class >= dataset.num_classes || classes_keep.iter().filter(|&&c| c == class).count() > 1 {
            return Err(DataError::Invalid(format!("bad or repeated class {class}")));
        }
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == class).collect();
        if members.len() < n_per_class {
            return Err(DataError::NotEnoughSamples {
                class,
                available: members.len(),
                requested: n_per_class,
            });
        }
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..n_per_class]);
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Class-balanced subsample with labels re-indexed to 0..classes_keep.len().
pub fn subset(dataset: &Dataset, classes_keep: &[usize], n_per_class: usize, seed: u64) -> Result<Dataset, DataError> {
    let indices = subset_indices(dataset, classes_keep, n_per_class, seed)?;
    let relabel = |l: usize| classes_keep.iter().position(|&c| c == l).expect("kept class");
    Ok(dataset.select(&indices, relabel, classes_keep.len()))
}
