//! Attention maps and the teacher-student similarity loss.
//!
//! An attention map is the channel-wise sum of squared activations, flattened
//! per sample and scaled to unit L2 norm. Summing over channels first lets a
//! student and a teacher of different widths be compared position by position.

use crate::nn::{ArchSpec, ModelError};
use crate::tensor::{Element, Tape, Tensor, Var};

/// Per-sample unit-norm attention maps (N × H·W) of an N×C×H×W activation.
pub fn attention_map<T: Element>(tape: &mut Tape<T>, acts: Var) -> Result<Var, ModelError> {
    let shape = tape.shape(acts).to_vec();
    let &[n, _, h, w] = shape.as_slice() else {
        return Err(ModelError::Tensor(crate::tensor::TensorError::Rank {
            op: "attention_map",
            expected: 4,
            shape,
        }));
    };
    let sq = tape.square(acts)?;
    let summed = tape.sum_channels(sq)?;
    let flat = tape.reshape(summed, &[n, h * w])?;
    Ok(tape.l2_normalize(flat)?)
}

/// Attention maps of plain values, with no gradient tracking.
pub fn attention_map_values<T: Element>(acts: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
    let mut tape = Tape::new();
    let v = tape.constant(acts.clone());
    let m = attention_map(&mut tape, v)?;
    Ok(tape.value(m).clone())
}

/// Matched (student layer, teacher layer) sites, indexed into each network's
/// group outputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerPairSet {
    pub pairs: Vec<(usize, usize)>,
}

impl LayerPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// One pair per spatial group: end of student group g with end of teacher group g.
pub fn default_layer_pairs(student: &ArchSpec, teacher: &ArchSpec) -> Result<LayerPairSet, ModelError> {
    let (s, t) = (student.group_widths.len(), teacher.group_widths.len());
    if s != t {
        return Err(ModelError::GroupMismatch { student: s, teacher: t });
    }
    Ok(LayerPairSet {
        pairs: (0..s).map(|g| (g, g)).collect(),
    })
}

/// Spatial extent (H, W) of each pair for a square input of side `input_size`.
/// Every group after the first halves the resolution.
pub fn pair_extents(pairs: &LayerPairSet, input_size: usize) -> Vec<(usize, usize)> {
    pairs
        .pairs
        .iter()
        .map(|&(g, _)| {
            let side = (0..g).fold(input_size, |s, _| s.div_ceil(2));
            (side, side)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the similarity term; 0 gives plain classification.
    pub lambda: f64,
}

impl LossConfig {
    /// 1000 split evenly across the pairs.
    pub fn default_for(pairs: &LayerPairSet) -> Self {
        Self {
            lambda: 1000.0 / pairs.len().max(1) as f64,
        }
    }
}

/// Σ over pairs of the per-sample squared distance between normalized
/// student and teacher maps, averaged over the batch. Teacher activations are
/// constants: nothing flows back into the teacher.
pub fn at_loss<T: Element>(
    tape: &mut Tape<T>,
    student_acts: &[Var],
    teacher_acts: &[Tensor<T>],
    pairs: &LayerPairSet,
) -> Result<Var, ModelError> {
    let mut total: Option<Var> = None;
    for (p, &(si, ti)) in pairs.pairs.iter().enumerate() {
        let s = *student_acts.get(si).ok_or_else(|| missing(p, "student", si))?;
        let t = teacher_acts.get(ti).ok_or_else(|| missing(p, "teacher", ti))?;
        let (ss, ts) = (tape.shape(s).to_vec(), t.shape().to_vec());
        if ss.len() != 4 || ts.len() != 4 || ss[0] != ts[0] || ss[2..] != ts[2..] {
            return Err(ModelError::PairMismatch {
                pair: p,
                student: ss,
                teacher: ts,
            });
        }
        let batch = T::from_usize(ss[0]).unwrap();
        let s_map = attention_map(tape, s)?;
        let t_val = tape.constant(t.clone());
        let t_map = attention_map(tape, t_val)?;
        let diff = tape.sub(s_map, t_map)?;
        let sq = tape.square(diff)?;
        let sum = tape.sum(sq)?;
        let term = tape.scale(sum, T::one() / batch)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    match total {
        Some(v) => Ok(v),
        None => Ok(tape.constant(Tensor::scalar(T::zero()))),
    }
}

fn missing(pair: usize, side: &str, index: usize) -> ModelError {
    ModelError::InvalidArch(format!("layer pair {pair} refers to missing {side} layer {index}"))
}

/// Loss handles recorded for one step.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub cls: Var,
    pub ts: Var,
}

/// Cross-entropy plus λ times the similarity loss.
pub fn total_loss<T: Element>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[usize],
    student_acts: &[Var],
    teacher_acts: &[Tensor<T>],
    pairs: &LayerPairSet,
    cfg: LossConfig,
) -> Result<LossParts, ModelError> {
    let cls = tape.softmax_cross_entropy(logits, labels)?;
    let ts = at_loss(tape, student_acts, teacher_acts, pairs)?;
    let total = if cfg.lambda == 0.0 {
        cls
    } else {
        let weighted = tape.scale(ts, T::from_f64_lossy(cfg.lambda))?;
        tape.add(cls, weighted)?
    };
    Ok(LossParts { total, cls, ts })
}
