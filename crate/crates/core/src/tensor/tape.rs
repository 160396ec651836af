//! Dynamically recorded reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and whatever the backward
//! pass needs. `backward` replays the nodes in reverse order, so a variable
//! consumed by several ops (a tied kernel, a skip connection) receives the sum
//! of all its contributions, accumulated in a fixed order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use super::array::Tensor;
use super::conv::{self, ConvGeom};
use super::element::Element;
use super::error::TensorError;
use super::norm::{self, BnCache, BnMode, RunningStats};
use super::params::{ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    BatchNorm,
    Relu,
    Add,
    Sub,
    Scale,
    Square,
    SumChannels,
    L2Normalize,
    GlobalAvgPool,
    Linear,
    SoftmaxCrossEntropy,
    Sum,
    Reshape,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
        OpKind::Leaf,
        OpKind::Conv2d,
        OpKind::BatchNorm,
        OpKind::Relu,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Scale,
        OpKind::Square,
        OpKind::SumChannels,
        OpKind::L2Normalize,
        OpKind::GlobalAvgPool,
        OpKind::Linear,
        OpKind::SoftmaxCrossEntropy,
        OpKind::Sum,
        OpKind::Reshape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::BatchNorm => "batchnorm",
            OpKind::Relu => "relu",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Scale => "scale",
            OpKind::Square => "square",
            OpKind::SumChannels => "sum_channels",
            OpKind::L2Normalize => "l2_normalize",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Linear => "linear",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            OpKind::Sum => "sum",
            OpKind::Reshape => "reshape",
        }
    }
}

impl std::str::FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown op {s:?}"))
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        dims: [usize; 4],
        cache: BnCache<T>,
    },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Square(Var),
    SumChannels {
        input: Var,
        dims: [usize; 4],
    },
    L2Normalize {
        input: Var,
        cols: usize,
        inv_norm: Vec<T>,
    },
    GlobalAvgPool {
        input: Var,
        dims: [usize; 4],
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
        dims: [usize; 3],
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    Sum(Var),
    Reshape(Var),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Relu(_) => OpKind::Relu,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Scale(..) => OpKind::Scale,
            Op::Square(_) => OpKind::Square,
            Op::SumChannels { .. } => OpKind::SumChannels,
            Op::L2Normalize { .. } => OpKind::L2Normalize,
            Op::GlobalAvgPool { .. } => OpKind::GlobalAvgPool,
            Op::Linear { .. } => OpKind::Linear,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Op::Sum(_) => OpKind::Sum,
            Op::Reshape(_) => OpKind::Reshape,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of executed operations for one forward/backward step.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    bound_params: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
    consumed: bool,
    corrupted: Option<(OpKind, T)>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound_params: HashMap::new(),
            param_order: Vec::new(),
            consumed: false,
            corrupted: None,
        }
    }

    /// Scale every input gradient produced by `kind`'s backward rule by
    /// `factor`. Only used to prove that the gradient checker catches broken
    /// backward rules.
    pub fn corrupt_backward(&mut self, kind: OpKind, factor: T) {
        self.corrupted = Some((kind, factor));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node<T>, TensorError> {
        self.nodes.get(v.0).ok_or(TensorError::UnknownVar(v.0))
    }

    fn grad_flag(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Input that is never differentiated.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Unnamed differentiable input.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Bind a stored parameter. Binding the same name again returns the same
    /// variable, so every use of a shared parameter feeds one gradient slot.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.param(id);
        if let Some(&v) = self.bound_params.get(&p.name) {
            return v;
        }
        let v = self.push(p.tensor.clone(), Op::Leaf, p.trainable);
        self.bound_params.insert(p.name.clone(), v);
        self.param_order.push((p.name.clone(), v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let geom = ConvGeom::new(self.node(input)?.value.shape(), self.node(kernel)?.value.shape(), stride, pad)?;
        let out = conv::forward(&geom, self.value(input), self.value(kernel));
        let rg = self.grad_flag(&[input, kernel]);
        Ok(self.push(out, Op::Conv2d { input, kernel, geom }, rg))
    }

    /// Batch normalization over N×H×W per channel. In train mode `stats` is
    /// updated with the batch statistics; eval mode reads it.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: BnMode,
        eps: T,
        momentum: T,
    ) -> Result<Var, TensorError> {
        let dims = self.node(input)?.value.dims4("batchnorm")?;
        let c = dims[1];
        for p in [gamma, beta] {
            let shape = self.node(p)?.value.shape();
            if shape != [c] {
                return Err(TensorError::ShapeMismatch {
                    op: "batchnorm",
                    lhs: dims.to_vec(),
                    rhs: shape.to_vec(),
                });
            }
        }
        if stats.channels() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm",
                lhs: dims.to_vec(),
                rhs: vec![stats.channels()],
            });
        }
        if mode == BnMode::Eval {
            stats.check_eval()?;
        }
        let fwd = norm::forward(
            self.value(input).data(),
            dims,
            self.value(gamma).data(),
            self.value(beta).data(),
            Some(stats),
            mode,
            eps,
        );
        if mode == BnMode::Train {
            stats.update(&fwd.batch_mean, &fwd.batch_var, dims[0] * dims[2] * dims[3], momentum);
        }
        let out = Tensor::new(&dims, fwd.out)?;
        let rg = self.grad_flag(&[input, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                dims,
                cache: fwd.cache,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, TensorError> {
        let out = self.node(input)?.value.map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.grad_flag(&[input]);
        Ok(self.push(out, Op::Relu(input), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self
            .node(a)?
            .value
            .zip_map(&self.node(b)?.value, |x, y| x + y)
            .map_err(|_| self.mismatch("add", a, b))?;
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self
            .node(a)?
            .value
            .zip_map(&self.node(b)?.value, |x, y| x - y)
            .map_err(|_| self.mismatch("sub", a, b))?;
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var, TensorError> {
        let out = self.node(input)?.value.map(|v| v * factor);
        let rg = self.grad_flag(&[input]);
        Ok(self.push(out, Op::Scale(input, factor), rg))
    }

    pub fn square(&mut self, input: Var) -> Result<Var, TensorError> {
        let out = self.node(input)?.value.map(|v| v * v);
        let rg = self.grad_flag(&[input]);
        Ok(self.push(out, Op::Square(input), rg))
    }

    /// N×C×H×W → N×1×H×W.
    pub fn sum_channels(&mut self, input: Var) -> Result<Var, TensorError> {
        let dims = self.node(input)?.value.dims4("sum_channels")?;
        let [n, c, h, w] = dims;
        let plane = h * w;
        let x = self.value(input).data();
        let mut out = vec![T::zero(); n * plane];
        for b in 0..n {
            let dst = &mut out[b * plane..(b + 1) * plane];
            for ch in 0..c {
                for (o, &v) in dst.iter_mut().zip(&x[(b * c + ch) * plane..][..plane]) {
                    *o += v;
                }
            }
        }
        let out = Tensor::new(&[n, 1, h, w], out)?;
        let rg = self.grad_flag(&[input]);
        Ok(self.push(out, Op::SumChannels { input, dims }, rg))
    }

    /// Normalize each sample (leading axis) to unit L2 norm; all-zero samples
    /// stay zero.
    pub fn l2_normalize(&mut self, input: Var) -> Result<Var, TensorError> {
        let value = &self.node(input)?.value;
        let rows = value.shape()[0];
        let cols = value.len() / rows;
        let mut inv_norm = Vec::with_capacity(rows);
        let mut out = value.data().to_vec();
        for row in out.chunks_mut(cols) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            let inv = if norm > T::zero() { T::one() / norm } else { T::zero() };
            row.iter_mut().for_each(|v| *v *= inv);
            inv_norm.push(inv);
        }
        let out = Tensor::new(value.shape(), out)?;
        let rg = self.grad_flag(&[input]);
        Ok(self.push(out, Op::L2Normalize { input, cols, inv_norm }, rg))
    }

    /// N×C×H×W → N×C.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var, TensorError> {
        let dims = self.node(input)?.value.dims4("global_avg_pool")?;
        let [n, c, h, w] = dims;
        let plane = h * w;
        let denom = T::from_usize(plane).unwrap();
        let out: Vec<T> = self
            .value(input)
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() / denom)
            .collect();
        let out = Tensor::new(&[n, c], out)?;
        let rg = self.grad_flag(&[input]);
        Ok(self.push(out, Op::GlobalAvgPool { input, dims }, rg))
    }

    /// `input` N×D, `weight` D×K, `bias` K.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let [n, d] = self.node(input)?.value.dims2("linear")?;
        let [dw, k] = self.node(weight)?.value.dims2("linear")?;
        if dw != d || self.node(bias)?.value.shape() != [k] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: self.shape(input).to_vec(),
                rhs: self.shape(weight).to_vec(),
            });
        }
        let mut out = Vec::with_capacity(n * k);
        for _ in 0..n {
            out.extend_from_slice(self.value(bias).data());
        }
        T::gemm(
            n,
            d,
            k,
            T::one(),
            self.value(input).data(),
            (d as isize, 1),
            self.value(weight).data(),
            (k as isize, 1),
            T::one(),
            &mut out,
            (k as isize, 1),
        );
        let out = Tensor::new(&[n, k], out)?;
        let rg = self.grad_flag(&[input, weight, bias]);
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
                dims: [n, d, k],
            },
            rg,
        ))
    }

    /// Batch mean of −log softmax(logits)[label].
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let [n, k] = self.node(logits)?.value.dims2("softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: vec![n, k],
                rhs: vec![labels.len()],
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(TensorError::LabelOutOfRange {
                index,
                label,
                classes: k,
            });
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::zero(); n * k];
        let mut total = T::zero();
        for (row, (p, &label)) in x.chunks(k).zip(probs.chunks_mut(k).zip(labels)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (pi, &v) in p.iter_mut().zip(row) {
                *pi = (v - max).exp();
                z += *pi;
            }
            p.iter_mut().for_each(|pi| *pi /= z);
            total += z.ln() + max - row[label];
        }
        let loss = Tensor::scalar(total / T::from_usize(n).unwrap());
        let rg = self.grad_flag(&[logits]);
        Ok(self.push(
            loss,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Result<Var, TensorError> {
        let out = Tensor::scalar(self.node(input)?.value.sum());
        let rg = self.grad_flag(&[input]);
        Ok(self.push(out, Op::Sum(input), rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.node(input)?.value.clone();
        let from = value.shape().to_vec();
        let out = value.reshaped(shape).map_err(|_| TensorError::ShapeMismatch {
            op: "reshape",
            lhs: from,
            rhs: shape.to_vec(),
        })?;
        let rg = self.grad_flag(&[input]);
        Ok(self.push(out, Op::Reshape(input), rg))
    }

    /// Reverse sweep from a scalar `loss`. A tape can be swept only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let shape = self.node(loss)?.value.shape().to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NotScalar(shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.local_backward(node, &g);
            let factor = match self.corrupted {
                Some((kind, f)) if kind == node.op.kind() => Some(f),
                _ => None,
            };
            for (target, mut delta) in contributions {
                if !self.nodes[target.0].requires_grad {
                    continue;
                }
                if let Some(f) = factor {
                    delta.iter_mut().for_each(|d| *d *= f);
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += *d),
                    slot @ None => *slot = Some(delta),
                }
            }
        }

        let leaf_grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                match (&node.op, g) {
                    (Op::Leaf, Some(g)) if node.requires_grad => {
                        Some(Tensor::new(node.value.shape(), g).expect("gradient shape"))
                    }
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients {
            grads: leaf_grads,
            params: self.param_order.clone(),
        })
    }

    /// Input-gradient contributions of one node given its output gradient.
    fn local_backward(&self, node: &Node<T>, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { input, kernel, geom } => {
                let (dx, dk) = conv::backward(
                    geom,
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    needs(*input),
                    needs(*kernel),
                );
                let mut out = Vec::new();
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                if let Some(dk) = dk {
                    out.push((*kernel, dk));
                }
                out
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                dims,
                cache,
            } => {
                let (dx, dgamma, dbeta) = norm::backward(cache, *dims, self.value(*gamma).data(), g);
                vec![(*input, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Relu(x) => {
                let xs = self.value(*x).data();
                let dx = g
                    .iter()
                    .zip(xs)
                    .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect();
                vec![(*x, dx)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|&v| -v).collect())],
            Op::Scale(x, s) => vec![(*x, g.iter().map(|&v| v * *s).collect())],
            Op::Square(x) => {
                let two = T::one() + T::one();
                let dx = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gi, &xi)| two * xi * gi)
                    .collect();
                vec![(*x, dx)]
            }
            Op::SumChannels { input, dims } => {
                let [n, c, h, w] = *dims;
                let plane = h * w;
                let mut dx = Vec::with_capacity(n * c * plane);
                for b in 0..n {
                    for _ in 0..c {
                        dx.extend_from_slice(&g[b * plane..(b + 1) * plane]);
                    }
                }
                vec![(*input, dx)]
            }
            Op::L2Normalize { input, cols, inv_norm } => {
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for (r, &inv) in inv_norm.iter().enumerate() {
                    let span = r * cols..(r + 1) * cols;
                    let (yr, gr) = (&y[span.clone()], &g[span.clone()]);
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yi), &gi) in dx[span].iter_mut().zip(yr).zip(gr) {
                        *d = (gi - yi * dot) * inv;
                    }
                }
                vec![(*input, dx)]
            }
            Op::GlobalAvgPool { input, dims } => {
                let plane = dims[2] * dims[3];
                let denom = T::from_usize(plane).unwrap();
                let dx = g
                    .iter()
                    .flat_map(|&gi| std::iter::repeat_n(gi / denom, plane))
                    .collect();
                vec![(*input, dx)]
            }
            Op::Linear {
                input,
                weight,
                bias,
                dims: [n, d, k],
            } => {
                let (n, d, k) = (*n, *d, *k);
                let mut out = Vec::new();
                if needs(*input) {
                    let mut dx = vec![T::zero(); n * d];
                    T::gemm(
                        n,
                        k,
                        d,
                        T::one(),
                        g,
                        (k as isize, 1),
                        self.value(*weight).data(),
                        (1, k as isize),
                        T::zero(),
                        &mut dx,
                        (d as isize, 1),
                    );
                    out.push((*input, dx));
                }
                if needs(*weight) {
                    let mut dw = vec![T::zero(); d * k];
                    T::gemm(
                        d,
                        n,
                        k,
                        T::one(),
                        self.value(*input).data(),
                        (1, d as isize),
                        g,
                        (k as isize, 1),
                        T::zero(),
                        &mut dw,
                        (k as isize, 1),
                    );
                    out.push((*weight, dw));
                }
                if needs(*bias) {
                    let mut db = vec![T::zero(); k];
                    for row in g.chunks(k) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    out.push((*bias, db));
                }
                out
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                let k = probs.len() / labels.len();
                let scale = g[0] / T::from_usize(labels.len()).unwrap();
                let mut dx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    dx[i * k + l] -= scale;
                }
                vec![(*logits, dx)]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).len()])],
            Op::Reshape(x) => vec![(*x, g.to_vec())],
        }
    }
}

/// Leaf gradients produced by one backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, Var)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a differentiable leaf; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|&(_, v)| self.wrt(v))
    }

    /// Parameter name → gradient, for every bound trainable parameter that
    /// received one.
    pub fn into_param_map(mut self) -> BTreeMap<String, Tensor<T>> {
        let mut map = BTreeMap::new();
        for (name, v) in std::mem::take(&mut self.params) {
            if let Some(g) = self.grads.get_mut(v.0).and_then(Option::take) {
                map.insert(name, g);
            }
        }
        map
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn conv_identity_kernel_and_zero_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
        let one = tape.constant(t(&[1, 1, 1, 1], &[1.]));
        let y = tape.conv2d(x, one, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 2., 3., 4.]);

        let zero = tape.constant(Tensor::zeros(&[2, 1, 3, 3]));
        let y = tape.conv2d(x, zero, 1, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_ones_three_by_three_counts_window_overlap() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let k = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = tape.conv2d(x, k, 1, 1).unwrap();
        // hand count of in-bounds taps per output position
        assert_eq!(tape.value(y).data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn conv_shape_error_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let k = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let err = tape.conv2d(x, k, 1, 1).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: vec![1, 2, 4, 4],
                rhs: vec![1, 3, 3, 3]
            }
        );
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[-1., 0., 2.]));
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0., 0., 2.]);

        let a = tape.constant(t(&[1, 2, 1, 1], &[3., 4.]));
        let sq = tape.square(a).unwrap();
        let s = tape.sum_channels(sq).unwrap();
        assert_eq!(tape.shape(s), &[1, 1, 1, 1]);
        assert_eq!(tape.value(s).data(), &[25.]);

        let v = tape.constant(t(&[1, 2], &[3., 4.]));
        let n = tape.l2_normalize(v).unwrap();
        let got = tape.value(n).data();
        assert!((got[0] - 0.6).abs() < 1e-15 && (got[1] - 0.8).abs() < 1e-15);

        let z = tape.constant(Tensor::zeros(&[2, 3]));
        let n = tape.l2_normalize(z).unwrap();
        assert!(tape.value(n).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_examples() {
        let mut tape = Tape::<f64>::new();
        let uniform = tape.constant(Tensor::zeros(&[2, 10]));
        let l = tape.softmax_cross_entropy(uniform, &[3, 7]).unwrap();
        assert!((tape.value(l).item() - 10f64.ln()).abs() < 1e-12);

        let mut sat = vec![0.0; 10];
        sat[4] = 1000.0;
        let s = tape.constant(t(&[1, 10], &sat));
        let l = tape.softmax_cross_entropy(s, &[4]).unwrap();
        assert!(tape.value(l).item().abs() < 1e-12);

        let x = tape.constant(t(&[1, 3], &[1., 2., 3.]));
        let l = tape.softmax_cross_entropy(x, &[2]).unwrap();
        // ln(e^1 + e^2 + e^3) - 3
        let expected = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((tape.value(l).item() - expected).abs() < 1e-12);
        assert!((tape.value(l).item() - 0.40761).abs() < 1e-5);

        assert_eq!(
            tape.softmax_cross_entropy(x, &[3]).unwrap_err(),
            TensorError::LabelOutOfRange {
                index: 0,
                label: 3,
                classes: 3
            }
        );
    }

    #[test]
    fn backward_of_scaled_sum_is_constant() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(t(&[2, 2], &[1., -2., 3., 0.5]));
        let y = tape.scale(x, 2.0).unwrap();
        let l = tape.sum(y).unwrap();
        let grads = tape.backward(l).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2., 2., 2., 2.]);
    }

    #[test]
    fn shared_kernel_gradient_doubles() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::randn(&[2, 2, 4, 4], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[3, 2, 3, 3], 1.0, &mut rng);

        let mut single = Tape::new();
        let xs = single.constant(x.clone());
        let ws = single.variable(w.clone());
        let y = single.conv2d(xs, ws, 1, 1).unwrap();
        let l = single.sum(y).unwrap();
        let g1 = single.backward(l).unwrap().wrt(ws).unwrap().clone();

        let mut shared = Tape::new();
        let xs = shared.constant(x);
        let ws = shared.variable(w);
        let a = shared.conv2d(xs, ws, 1, 1).unwrap();
        let b = shared.conv2d(xs, ws, 1, 1).unwrap();
        let y = shared.add(a, b).unwrap();
        let l = shared.sum(y).unwrap();
        let g2 = shared.backward(l).unwrap().wrt(ws).unwrap().clone();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(t(&[2], &[1., 2.]));
        let l = tape.sum(x).unwrap();
        tape.backward(l).unwrap();
        assert!(matches!(tape.backward(l), Err(TensorError::TapeConsumed)));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(t(&[2], &[1., 2.]));
        assert!(matches!(tape.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", t(&[2], &[1., 2.])).unwrap();
        store.freeze();
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let again = tape.param(&store, id);
        assert_eq!(w, again);
        let l = tape.sum(w).unwrap();
        let grads = tape.backward(l).unwrap();
        assert!(grads.wrt(w).is_none());
        assert!(grads.into_param_map().is_empty());
    }

    #[test]
    fn batchnorm_constant_input_gives_beta() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[2, 2, 3, 3], 4.2));
        let gamma = tape.constant(t(&[2], &[1.5, -0.5]));
        let beta = tape.constant(t(&[2], &[0.3, -0.7]));
        let mut stats = RunningStats::identity(2);
        let y = tape
            .batchnorm(x, gamma, beta, &mut stats, BnMode::Train, 1e-5, 0.1)
            .unwrap();
        let out = tape.value(y).data();
        for (i, &v) in out.iter().enumerate() {
            let expect = if (i / 9) % 2 == 0 { 0.3 } else { -0.7 };
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_eval_needs_recorded_stats() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let g = tape.constant(Tensor::ones(&[1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let mut unset = RunningStats::unset(1);
        assert_eq!(
            tape.batchnorm(x, g, b, &mut unset, BnMode::Eval, 1e-5, 0.1).unwrap_err(),
            TensorError::NoRunningStats
        );
        let mut ident = RunningStats::identity(1);
        let y = tape.batchnorm(x, g, b, &mut ident, BnMode::Eval, 0.0, 0.1).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 1., 1., 1.]);
    }
}
