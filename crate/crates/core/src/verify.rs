//! Numerical verification harness: central finite differences against the
//! tape gradients, and the tied-versus-untied shared-gradient oracle.
//!
//! Everything here runs in 64-bit precision. The finite-difference side only
//! ever calls forward passes, so it is independent of every backward rule.

use std::fmt;

use rand::Rng;

use crate::distill::{at_loss, total_loss, LayerPairSet, LossConfig};
use crate::nn::{brc_forward, residual_step, ArchSpec, BrcUnit, ModelError, Network, TeacherNetwork, Variant};
use crate::recurrence::StudentNetwork;
use crate::rng::{stream, Stream};
use crate::tensor::{BnMode, OpKind, ParamStore, RunningStats, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const SHARED_TOLERANCE: f64 = 1e-10;

/// Denominator floor of the relative error; below it the error is absolute.
const REL_FLOOR: f64 = 1e-6;
/// Coordinates checked per tensor; larger tensors are subsampled.
const MAX_COORDS: usize = 48;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckReport {
    fn new(name: impl Into<String>, max_rel_err: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_rel_err,
            tolerance,
            passed: max_rel_err.is_finite() && max_rel_err < tolerance,
        }
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<5} {:<40} max rel err {:.3e} (tol {:.0e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.tolerance
        )
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn coords<R: Rng>(len: usize, rng: &mut R) -> Vec<usize> {
    if len <= MAX_COORDS {
        (0..len).collect()
    } else {
        (0..MAX_COORDS).map(|_| rng.random_range(0..len)).collect()
    }
}

type Builder<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, ModelError> + 'a;

/// Max relative error between tape gradients and central differences of a
/// scalar function of `inputs`.
pub fn check_inputs(inputs: &[Tensor<f64>], f: &Builder<'_>, corrupt: Option<OpKind>, seed: u64) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    if let Some(kind) = corrupt {
        tape.corrupt_backward(kind, 1.5);
    }
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let eval = |values: &[Tensor<f64>]| -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.variable(t.clone())).collect();
        let l = f(&mut tape, &vars)?;
        Ok(tape.value(l).item())
    };
    let mut rng = stream(seed, Stream::Check);
    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in coords(inputs[i].len(), &mut rng) {
            let mut probe = inputs.to_vec();
            probe[i].data_mut()[j] += FD_STEP;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] -= 2.0 * FD_STEP;
            let down = eval(&probe)?;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}

type NetLoss<'a, N> = dyn Fn(&mut N, &mut Tape<f64>) -> Result<Var, ModelError> + 'a;

/// Finite-difference check of a network loss with respect to all its
/// trainable parameters. Each evaluation runs on a fresh copy so BN
/// running statistics never leak between probes.
pub fn check_network<N>(net: &N, f: &NetLoss<'_, N>, corrupt: Option<OpKind>, seed: u64) -> Result<f64, ModelError>
where
    N: Network<f64> + Clone,
{
    let mut tape = Tape::new();
    if let Some(kind) = corrupt {
        tape.corrupt_backward(kind, 1.5);
    }
    let loss = f(&mut net.clone(), &mut tape)?;
    let grads = tape.backward(loss)?.into_param_map();
    let mut rng = stream(seed, Stream::Check);
    let mut worst = 0.0f64;
    let names: Vec<(String, usize)> = net
        .store()
        .params()
        .filter(|p| p.trainable)
        .map(|p| (p.name.clone(), p.tensor.len()))
        .collect();
    for (name, len) in names {
        let analytic = grads.get(&name);
        for j in coords(len, &mut rng) {
            let probe = |delta: f64| -> Result<f64, ModelError> {
                let mut copy = net.clone();
                copy.store_mut().by_name_mut(&name).expect("param").tensor.data_mut()[j] += delta;
                let mut tape = Tape::new();
                let l = f(&mut copy, &mut tape)?;
                Ok(tape.value(l).item())
            };
            let numeric = (probe(FD_STEP)? - probe(-FD_STEP)?) / (2.0 * FD_STEP);
            let a = analytic.map(|g| g.data()[j]).unwrap_or(0.0);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    Ok(worst)
}

/// Scalar projection `Σ_i r_i · v_i` with fixed random weights, so every
/// output element gets a distinct, nonzero upstream gradient.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var, ModelError> {
    let len: usize = tape.shape(v).iter().product();
    let flat = tape.reshape(v, &[1, len])?;
    let w = tape.constant(Tensor::randn(&[len, 1], 1.0, &mut stream(seed ^ 0x5eed, Stream::Check)));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.linear(flat, w, b)?;
    Ok(tape.sum(y)?)
}

fn randn(shape: &[usize], seed: u64, salt: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut stream(seed.wrapping_mul(1_000_003).wrapping_add(salt), Stream::Check))
}

/// Tiny student/teacher pair used by the composed checks.
pub fn tiny_pair(variant: Variant, n: usize, seed: u64) -> Result<(StudentNetwork<f64>, TeacherNetwork<f64>), ModelError> {
    let teacher_arch = ArchSpec::teacher_with_widths(&[4, 8], 1, 3);
    let student_arch = ArchSpec::student_of(&teacher_arch, variant, n);
    let mut rng = stream(seed, Stream::Init);
    let student = StudentNetwork::build(&student_arch, &mut rng)?;
    let teacher = TeacherNetwork::build(&teacher_arch, &mut rng)?;
    Ok((student, teacher))
}

/// Finite-difference checks for every differentiable op and the composed
/// BRC, residual, similarity-loss and full-network graphs.
pub fn gradcheck_suite(seed: u64, corrupt: Option<OpKind>) -> Result<Vec<CheckReport>, ModelError> {
    let mut reports = Vec::new();
    let mut op = |name: &str, inputs: Vec<Tensor<f64>>, f: &Builder<'_>| -> Result<(), ModelError> {
        let err = check_inputs(&inputs, f, corrupt, seed)?;
        reports.push(CheckReport::new(name, err, FD_TOLERANCE));
        Ok(())
    };
    let r = |shape: &[usize], salt| randn(shape, seed, salt);

    op("conv2d (stride 1, pad 1)", vec![r(&[2, 3, 5, 5], 1), r(&[4, 3, 3, 3], 2)], &|t, v| {
        let y = t.conv2d(v[0], v[1], 1, 1)?;
        project(t, y, 1)
    })?;
    op("conv2d (stride 2, pad 1)", vec![r(&[2, 2, 6, 6], 3), r(&[3, 2, 3, 3], 4)], &|t, v| {
        let y = t.conv2d(v[0], v[1], 2, 1)?;
        project(t, y, 2)
    })?;
    op("batchnorm (train)", vec![r(&[3, 2, 3, 3], 5), r(&[2], 6), r(&[2], 7)], &|t, v| {
        let mut stats = RunningStats::identity(2);
        let y = t.batchnorm(v[0], v[1], v[2], &mut stats, BnMode::Train, 1e-5, 0.1)?;
        project(t, y, 3)
    })?;
    op("batchnorm (eval)", vec![r(&[2, 2, 3, 3], 8), r(&[2], 9), r(&[2], 10)], &|t, v| {
        let mut stats = RunningStats::identity(2);
        stats.mean = vec![0.3, -0.2];
        stats.var = vec![1.7, 0.6];
        let y = t.batchnorm(v[0], v[1], v[2], &mut stats, BnMode::Eval, 1e-5, 0.1)?;
        project(t, y, 4)
    })?;
    op("relu", vec![r(&[2, 3, 4], 11)], &|t, v| {
        let y = t.relu(v[0])?;
        project(t, y, 5)
    })?;
    op("add", vec![r(&[2, 5], 12), r(&[2, 5], 13)], &|t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, 6)
    })?;
    op("sub", vec![r(&[2, 5], 14), r(&[2, 5], 15)], &|t, v| {
        let y = t.sub(v[0], v[1])?;
        project(t, y, 7)
    })?;
    op("scale", vec![r(&[7], 16)], &|t, v| {
        let y = t.scale(v[0], -2.5)?;
        project(t, y, 8)
    })?;
    op("square", vec![r(&[7], 17)], &|t, v| {
        let y = t.square(v[0])?;
        project(t, y, 9)
    })?;
    op("sum_channels", vec![r(&[2, 3, 2, 3], 18)], &|t, v| {
        let y = t.sum_channels(v[0])?;
        project(t, y, 10)
    })?;
    op("l2_normalize", vec![r(&[3, 6], 19)], &|t, v| {
        let y = t.l2_normalize(v[0])?;
        project(t, y, 11)
    })?;
    op("global_avg_pool", vec![r(&[2, 3, 3, 2], 20)], &|t, v| {
        let y = t.global_avg_pool(v[0])?;
        project(t, y, 12)
    })?;
    op("linear", vec![r(&[3, 4], 21), r(&[4, 5], 22), r(&[5], 23)], &|t, v| {
        let y = t.linear(v[0], v[1], v[2])?;
        project(t, y, 13)
    })?;
    op("softmax_cross_entropy", vec![r(&[4, 5], 24)], &|t, v| {
        Ok(t.softmax_cross_entropy(v[0], &[0, 4, 2, 2])?)
    })?;
    op("sum", vec![r(&[3, 3], 25)], &|t, v| {
        let s = t.sum(v[0])?;
        let sq = t.square(s)?;
        Ok(t.sum(sq)?)
    })?;
    op("reshape", vec![r(&[2, 6], 26)], &|t, v| {
        let y = t.reshape(v[0], &[3, 4])?;
        project(t, y, 14)
    })?;

    // composed graphs through the network building blocks
    let mut store = ParamStore::<f64>::new();
    let unit = BrcUnit::new(&mut store, "u", 3, 2, &mut stream(seed, Stream::Init))?;
    for (i, p) in store.params_mut().enumerate() {
        p.tensor = p.tensor.map(|v| v + 0.1 * i as f64);
    }
    op("brc_forward (BN-ReLU-Conv)", vec![r(&[2, 3, 4, 4], 27), r(&[3, 3, 3, 3], 28), r(&[3], 29), r(&[3], 30)], &|t, v| {
        let mut stats = RunningStats::identity(3);
        let h = t.batchnorm(v[0], v[2], v[3], &mut stats, BnMode::Train, 1e-5, 0.1)?;
        let h = t.relu(h)?;
        let y = t.conv2d(h, v[1], 1, 1)?;
        project(t, y, 15)
    })?;
    op("brc_forward (unit, wrt input)", vec![r(&[2, 3, 4, 4], 31)], &|t, v| {
        let mut s = store.clone();
        let y = brc_forward(&unit, t, &mut s, v[0], 1, BnMode::Train)?;
        project(t, y, 16)
    })?;
    op("residual_step (wrt input)", vec![r(&[2, 3, 4, 4], 32)], &|t, v| {
        let mut s = store.clone();
        let y = residual_step(t, v[0], |t, h| brc_forward(&unit, t, &mut s, h, 0, BnMode::Train))?;
        project(t, y, 17)
    })?;
    let teacher_acts = vec![r(&[2, 5, 4, 4], 33), r(&[2, 7, 2, 2], 34)];
    let pairs = LayerPairSet {
        pairs: vec![(0, 0), (1, 1)],
    };
    op("at_loss (wrt student activations)", vec![r(&[2, 3, 4, 4], 35), r(&[2, 6, 2, 2], 36)], &|t, v| {
        at_loss(t, v, &teacher_acts, &pairs)
    })?;

    for variant in Variant::ALL {
        let (student, mut teacher) = tiny_pair(variant, 2, seed)?;
        let x = r(&[2, 3, 4, 4], 40);
        let labels = [1usize, 2];
        let mut ttape = Tape::new();
        let xv = ttape.constant(x.clone());
        let tout = teacher.forward(&mut ttape, xv, BnMode::Train)?;
        let tacts: Vec<Tensor<f64>> = tout.group_outputs.iter().map(|&v| ttape.value(v).clone()).collect();
        let pairs = LayerPairSet {
            pairs: vec![(0, 0), (1, 1)],
        };
        let loss = |net: &mut StudentNetwork<f64>, t: &mut Tape<f64>| -> Result<Var, ModelError> {
            let xv = t.constant(x.clone());
            let out = net.forward(t, xv, BnMode::Train)?;
            let parts = total_loss(t, out.logits, &labels, &out.group_outputs, &tacts, &pairs, LossConfig { lambda: 3.0 })?;
            Ok(parts.total)
        };
        let err = check_network(&student, &loss, corrupt, seed)?;
        reports.push(CheckReport::new(format!("student {variant} n=2 total loss"), err, FD_TOLERANCE));
    }
    let (_, teacher) = tiny_pair(Variant::ReResNet1, 1, seed)?;
    let x = r(&[2, 3, 4, 4], 41);
    let loss = |net: &mut TeacherNetwork<f64>, t: &mut Tape<f64>| -> Result<Var, ModelError> {
        let xv = t.constant(x.clone());
        let out = net.forward(t, xv, BnMode::Train)?;
        Ok(t.softmax_cross_entropy(out.logits, &[0, 2])?)
    };
    let err = check_network(&teacher, &loss, corrupt, seed)?;
    reports.push(CheckReport::new("teacher classification loss", err, FD_TOLERANCE));
    Ok(reports)
}

/// Shared-gradient oracle: the tied network's gradient for each shared kernel
/// must equal the sum of the per-timestep gradients of an equal-valued
/// untied clone. Returns the max relative error over all kernels.
pub fn shared_gradient_error(variant: Variant, n: usize, seed: u64) -> Result<f64, ModelError> {
    let (mut tied, mut teacher) = tiny_pair(variant, n, seed)?;
    let mut untied = tied.untied_clone()?;
    let x = randn(&[3, 3, 4, 4], seed, 50);
    let labels = [0usize, 1, 2];
    let mut ttape = Tape::new();
    let xv = ttape.constant(x.clone());
    let tout = teacher.forward(&mut ttape, xv, BnMode::Eval)?;
    let tacts: Vec<Tensor<f64>> = tout.group_outputs.iter().map(|&v| ttape.value(v).clone()).collect();
    let pairs = LayerPairSet {
        pairs: vec![(0, 0), (1, 1)],
    };
    let mut grads = Vec::new();
    for net in [&mut tied, &mut untied] {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = net.forward(&mut tape, xv, BnMode::Train)?;
        let parts = total_loss(&mut tape, out.logits, &labels, &out.group_outputs, &tacts, &pairs, LossConfig { lambda: 5.0 })?;
        grads.push(tape.backward(parts.total)?.into_param_map());
    }
    let (tied_grads, untied_grads) = (&grads[0], &grads[1]);
    let mut worst = 0.0f64;
    for (name, uses) in tied.shared_kernels() {
        let shared = tied_grads.get(&name).ok_or_else(|| ModelError::InvalidArch(format!("no gradient for {name}")))?;
        let mut summed = vec![0.0; shared.len()];
        for k in 0..uses {
            let copy = untied_grads
                .get(&format!("{name}@{k}"))
                .ok_or_else(|| ModelError::InvalidArch(format!("no gradient for {name}@{k}")))?;
            summed.iter_mut().zip(copy.data()).for_each(|(s, g)| *s += g);
        }
        let scale = shared.max_abs().max(REL_FLOOR);
        for (a, b) in shared.data().iter().zip(&summed) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    // every unshared parameter must see the same gradient in both networks
    for (name, g) in tied_grads {
        if let Some(u) = untied_grads.get(name) {
            let scale = g.max_abs().max(REL_FLOOR);
            for (a, b) in g.data().iter().zip(u.data()) {
                worst = worst.max((a - b).abs() / scale);
            }
        }
    }
    Ok(worst)
}

/// Shared-gradient oracle over every variant and n ∈ {1, 2, 3}.
pub fn shared_gradient_suite(seed: u64) -> Result<Vec<CheckReport>, ModelError> {
    let mut out = Vec::new();
    for variant in Variant::ALL {
        for n in 1..=3 {
            let err = shared_gradient_error(variant, n, seed)?;
            out.push(CheckReport::new(format!("shared gradients {variant} n={n}"), err, SHARED_TOLERANCE));
        }
    }
    Ok(out)
}
