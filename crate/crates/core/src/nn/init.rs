use rand::Rng;

use crate::tensor::{Element, Tensor};

/// Zero-mean normal with variance 2/fan_in.
pub fn he_init<T: Element, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::randn(shape, std, rng)
}

/// fan_in of an O×I×Kh×Kw kernel or a D×K linear weight.
pub fn fan_in(shape: &[usize]) -> usize {
    match shape {
        [_, rest @ ..] if shape.len() == 4 => rest.iter().product(),
        [d, _] => *d,
        _ => shape.iter().product(),
    }
}
