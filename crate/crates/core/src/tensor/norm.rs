//! Per-channel batch normalization kernels and running statistics.

use super::element::Element;
use super::error::TensorError;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running mean/variance of one BN site. `None` means nothing recorded yet.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    recorded: bool,
}

impl<T: Element> RunningStats<T> {
    /// Mean 0, variance 1: usable in eval mode straight away.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            recorded: true,
        }
    }

    /// Placeholder that refuses eval-mode use until a train step records stats.
    pub fn unset(channels: usize) -> Self {
        Self {
            recorded: false,
            ..Self::identity(channels)
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn is_recorded(&self) -> bool {
        self.recorded
    }

    /// Exponential update with the batch statistics; `batch_var` is biased,
    /// the stored variance is the unbiased estimate.
    pub fn update(&mut self, batch_mean: &[T], batch_var: &[T], count: usize, momentum: T) {
        let correction = if count > 1 {
            T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap()
        } else {
            T::one()
        };
        let keep = T::one() - momentum;
        for c in 0..self.mean.len() {
            self.mean[c] = keep * self.mean[c] + momentum * batch_mean[c];
            self.var[c] = keep * self.var[c] + momentum * batch_var[c] * correction;
        }
        self.recorded = true;
    }

    pub(crate) fn check_eval(&self) -> Result<(), TensorError> {
        if self.recorded {
            Ok(())
        } else {
            Err(TensorError::NoRunningStats)
        }
    }
}

/// Values retained by the tape for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct BnCache<T> {
    pub mode: BnMode,
    /// normalized input, same layout as x
    pub xhat: Vec<T>,
    /// 1/sqrt(var + eps) per channel
    pub inv_std: Vec<T>,
}

pub(crate) struct BnForward<T> {
    pub out: Vec<T>,
    pub cache: BnCache<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

/// `dims` = [N, C, H, W].
pub(crate) fn forward<T: Element>(
    x: &[T],
    dims: [usize; 4],
    gamma: &[T],
    beta: &[T],
    stats: Option<&RunningStats<T>>,
    mode: BnMode,
    eps: T,
) -> BnForward<T> {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let count = T::from_usize(n * plane).unwrap();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    match mode {
        BnMode::Train => {
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s += x[(b * c + ch) * plane..][..plane].iter().copied().sum::<T>();
                }
                let m = s / count;
                let mut v = T::zero();
                for b in 0..n {
                    for &xv in &x[(b * c + ch) * plane..][..plane] {
                        let d = xv - m;
                        v += d * d;
                    }
                }
                mean[ch] = m;
                var[ch] = v / count;
            }
        }
        BnMode::Eval => {
            let stats = stats.expect("eval batchnorm without stats");
            mean.copy_from_slice(&stats.mean);
            var.copy_from_slice(&stats.var);
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    BnForward {
        out,
        cache: BnCache {
            mode,
            xhat,
            inv_std,
        },
        batch_mean: mean,
        batch_var: var,
    }
}

/// Returns (dx, dgamma, dbeta).
pub(crate) fn backward<T: Element>(
    cache: &BnCache<T>,
    dims: [usize; 4],
    gamma: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let count = T::from_usize(n * plane).unwrap();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let range = base..base + plane;
            for (&g, &xh) in dy[range.clone()].iter().zip(&cache.xhat[range]) {
                dgamma[ch] += g * xh;
                dbeta[ch] += g;
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let scale = gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                BnMode::Eval => {
                    for i in base..base + plane {
                        dx[i] = dy[i] * scale;
                    }
                }
                BnMode::Train => {
                    // sum(dxhat) = gamma·dbeta, sum(dxhat·xhat) = gamma·dgamma
                    let mean_dy = dbeta[ch] / count;
                    let mean_dy_xhat = dgamma[ch] / count;
                    for i in base..base + plane {
                        dx[i] = scale * (dy[i] - mean_dy - cache.xhat[i] * mean_dy_xhat);
                    }
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}
