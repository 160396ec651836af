use std::collections::BTreeMap;

use super::TrainError;
use crate::tensor::{Element, ParamStore, Tensor};

/// SGD with momentum and L2 weight decay folded into the velocity:
/// `v ← μ·v + g + wd·w`, `w ← w − lr·v`.
#[derive(Clone, Debug, Default)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Vec<T>>,
}

impl<T: Element> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    /// Updates every trainable parameter in place and returns the number of
    /// scalars visited. Frozen parameters are skipped; a trainable parameter
    /// without a gradient is an error.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>, lr: f64) -> Result<usize, TrainError> {
        let (lr, mu, wd) = (
            T::from_f64_lossy(lr),
            T::from_f64_lossy(self.momentum),
            T::from_f64_lossy(self.weight_decay),
        );
        let mut visited = 0;
        for p in store.params_mut().filter(|p| p.trainable) {
            let g = grads.get(&p.name).ok_or_else(|| TrainError::MissingGradient(p.name.clone()))?;
            if g.shape() != p.tensor.shape() {
                return Err(TrainError::Config(format!(
                    "gradient for {} has shape {:?}, parameter has {:?}",
                    p.name,
                    g.shape(),
                    p.tensor.shape()
                )));
            }
            let v = self
                .velocity
                .entry(p.name.clone())
                .or_insert_with(|| vec![T::zero(); g.len()]);
            for ((w, vi), &gi) in p.tensor.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vi = mu * *vi + gi + wd * *w;
                *w -= lr * *vi;
            }
            visited += g.len();
        }
        Ok(visited)
    }
}

/// `base / factor^k`, k = number of decay points ≤ `iter`.
pub fn lr_at(iter: usize, base_lr: f64, decay_iters: &[usize], decay_factor: f64) -> f64 {
    let k = decay_iters.iter().filter(|&&d| d <= iter).count();
    base_lr / decay_factor.powi(k as i32)
}
