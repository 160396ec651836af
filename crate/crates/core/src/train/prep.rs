//! Per-channel standardization and random crop/flip augmentation.

use rand::Rng;

use crate::data::Dataset;

pub const STD_FLOOR: f64 = 1e-6;
pub const CROP_PAD: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Population mean and standard deviation per channel; the deviation is
    /// floored at [`STD_FLOOR`].
    pub fn of(dataset: &Dataset) -> Self {
        let plane = dataset.image_size * dataset.image_size;
        let count = (dataset.len() * plane) as f64;
        let mut mean = vec![0.0; dataset.channels];
        let mut std = vec![0.0; dataset.channels];
        for c in 0..dataset.channels {
            let values = || (0..dataset.len()).flat_map(move |i| dataset.image(i)[c * plane..(c + 1) * plane].iter());
            let m = values().map(|&v| v as f64).sum::<f64>() / count;
            let var = values().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / count;
            mean[c] = m;
            std[c] = var.sqrt().max(STD_FLOOR);
        }
        Self { mean, std }
    }

    pub fn apply(&self, dataset: &Dataset) -> Dataset {
        let plane = dataset.image_size * dataset.image_size;
        let mut out = dataset.clone();
        for img in out.images.chunks_mut(dataset.image_len()) {
            for (c, channel) in img.chunks_mut(plane).enumerate() {
                let (m, s) = (self.mean[c], self.std[c]);
                channel.iter_mut().for_each(|v| *v = ((*v as f64 - m) / s) as f32);
            }
        }
        out
    }
}

/// Standardizes both splits with statistics of the training split.
pub fn standardize(train: &Dataset, test: &Dataset) -> (Dataset, Dataset, ChannelStats) {
    let stats = ChannelStats::of(train);
    (stats.apply(train), stats.apply(test), stats)
}

/// Crop at offset (`dy`, `dx`) of the zero-padded image, optionally mirrored.
/// Offsets range over 0..=2·pad; (pad, pad) is the unshifted image.
pub fn crop_flip(image: &[f32], channels: usize, size: usize, dy: usize, dx: usize, flip: bool) -> Vec<f32> {
    let mut out = vec![0.0f32; image.len()];
    for c in 0..channels {
        let src = &image[c * size * size..(c + 1) * size * size];
        let dst = &mut out[c * size * size..(c + 1) * size * size];
        for y in 0..size {
            let sy = (y + dy) as isize - CROP_PAD as isize;
            if sy < 0 || sy >= size as isize {
                continue;
            }
            for x in 0..size {
                let ox = if flip { size - 1 - x } else { x };
                let sx = (ox + dx) as isize - CROP_PAD as isize;
                if sx >= 0 && sx < size as isize {
                    dst[y * size + x] = src[sy as usize * size + sx as usize];
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentFlags {
    pub crop: bool,
    pub flip: bool,
}

/// Pad-4 random crop and horizontal flip with probability ½.
pub fn augment<R: Rng + ?Sized>(image: &[f32], channels: usize, size: usize, flags: AugmentFlags, rng: &mut R) -> Vec<f32> {
    let (dy, dx) = if flags.crop {
        (rng.random_range(0..=2 * CROP_PAD), rng.random_range(0..=2 * CROP_PAD))
    } else {
        (CROP_PAD, CROP_PAD)
    };
    let flip = flags.flip && rng.random_bool(0.5);
    crop_flip(image, channels, size, dy, dx, flip)
}
