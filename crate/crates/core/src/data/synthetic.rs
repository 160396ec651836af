//! Grating templates plus Gaussian noise: a separable task for quick runs.

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};

use super::{Dataset, Split};
use crate::rng::{stream, Stream};

pub const SYNTHETIC_NOISE: f64 = 0.1;

/// Class template: an oriented sinusoidal grating, phase-shifted per channel.
/// Orientation is `π·class/classes`, so every class has its own direction.
pub fn template(class: usize, classes: usize, channels: usize, size: usize) -> Vec<f32> {
    let theta = PI * class as f64 / classes as f64;
    let freq = 2.0 + (class % 2) as f64;
    let mut out = Vec::with_capacity(channels * size * size);
    for ch in 0..channels {
        let phase = 2.0 * PI * ch as f64 / channels as f64;
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 * theta.cos() + y as f64 * theta.sin()) / size as f64;
                out.push((0.5 + 0.3 * (2.0 * PI * freq * u + phase).sin()) as f32);
            }
        }
    }
    out
}

/// `n_per_class` noisy copies (σ = `sigma`) of each class template, clamped
/// to [0, 1]; labels cycle 0, 1, …, classes−1.
pub fn synthetic_dataset_with_noise(
    seed: u64,
    n_per_class: usize,
    classes: usize,
    image_size: usize,
    sigma: f64,
    split: Split,
) -> Dataset {
    let templates: Vec<Vec<f32>> = (0..classes).map(|c| template(c, classes, 3, image_size)).collect();
    let mut rng = stream(seed, Stream::Data);
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let total = n_per_class * classes;
    let mut images = Vec::with_capacity(total * templates.first().map_or(0, Vec::len));
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let class = i % classes;
        labels.push(class);
        images.extend(templates[class].iter().map(|&t| {
            let n = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (t as f64 + n).clamp(0.0, 1.0) as f32
        }));
    }
    Dataset::new(images, labels, classes, 3, image_size, split).expect("consistent synthetic dataset")
}

/// Training split with the default noise level.
pub fn synthetic_dataset(seed: u64, n_per_class: usize, classes: usize, image_size: usize) -> Dataset {
    synthetic_dataset_with_noise(seed, n_per_class, classes, image_size, SYNTHETIC_NOISE, Split::Train)
}

/// Fraction of samples whose nearest template (Euclidean) is their own class.
pub fn nearest_template_accuracy(dataset: &Dataset) -> f64 {
    let templates: Vec<Vec<f32>> = (0..dataset.num_classes)
        .map(|c| template(c, dataset.num_classes, dataset.channels, dataset.image_size))
        .collect();
    let correct = (0..dataset.len())
        .filter(|&i| {
            let img = dataset.image(i);
            let dist = |t: &[f32]| img.iter().zip(t).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
            let best = (0..templates.len())
                .min_by(|&a, &b| dist(&templates[a]).total_cmp(&dist(&templates[b])))
                .unwrap();
            best == dataset.labels[i]
        })
        .count();
    correct as f64 / dataset.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        assert_eq!(synthetic_dataset(4, 10, 4, 8), synthetic_dataset(4, 10, 4, 8));
        assert_ne!(synthetic_dataset(4, 10, 4, 8), synthetic_dataset(5, 10, 4, 8));
    }

    #[test]
    fn noiseless_samples_of_a_class_coincide() {
        let d = synthetic_dataset_with_noise(1, 5, 4, 8, 0.0, Split::Train);
        for i in 0..d.len() {
            let first = d.labels[i];
            assert_eq!(d.image(i), d.image(first));
        }
    }

    #[test]
    fn templates_separate_noisy_samples() {
        for (classes, size) in [(4, 8), (4, 16), (10, 32)] {
            let d = synthetic_dataset(3, 200, classes, size);
            assert_eq!(nearest_template_accuracy(&d), 1.0, "{classes} classes at {size}px");
        }
    }

    #[test]
    fn values_stay_in_unit_interval() {
        let d = synthetic_dataset_with_noise(2, 50, 4, 8, 0.5, Split::Test);
        assert!(d.images.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(d.split, Split::Test);
    }
}
