use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::prep::{augment, AugmentFlags};
use super::{Metrics, MetricRecord, Sgd, TrainConfig, TrainError};
use crate::data::Dataset;
use crate::distill::{default_layer_pairs, total_loss, LayerPairSet, LossConfig};
use crate::nn::{count_parameters, ArchSpec, Network, TeacherNetwork};
use crate::recurrence::{build_student, build_teacher, StudentNetwork};
use crate::rng::{stream, Stream};
use crate::tensor::{BnMode, Element, Tape, Tensor};

pub const EVAL_BATCH: usize = 100;

/// Endless stream of sample indices: each epoch is a fresh permutation drawn
/// from the shuffle stream, and batches run across epoch boundaries.
#[derive(Clone, Debug)]
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub fn new(len: usize, seed: u64) -> Self {
        let order: Vec<usize> = (0..len).collect();
        Self {
            pos: order.len(),
            order,
            rng: stream(seed, Stream::Shuffle),
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        assert!(!self.order.is_empty(), "batcher over an empty dataset");
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn batch_tensor<T: Element, R: Rng + ?Sized>(
    data: &Dataset,
    indices: &[usize],
    flags: Option<AugmentFlags>,
    rng: &mut R,
) -> Tensor<T> {
    let mut values = Vec::with_capacity(indices.len() * data.image_len());
    for &i in indices {
        let img = data.image(i);
        let push = |values: &mut Vec<T>, px: &[f32]| values.extend(px.iter().map(|&v| T::from_f64_lossy(v as f64)));
        match flags {
            Some(f) => push(&mut values, &augment(img, data.channels, data.image_size, f, rng)),
            None => push(&mut values, img),
        }
    }
    let s = data.image_size;
    Tensor::new(&[indices.len(), data.channels, s, s], values).expect("batch layout")
}

/// Rank of the true class: number of classes scoring strictly higher.
fn ranks<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .map(|(row, &y)| row.iter().filter(|&&v| v > row[y]).count())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracy {
    pub top1: f64,
    /// Reported for problems with at least five classes.
    pub top5: Option<f64>,
    pub samples: usize,
}

/// Eval-mode accuracy over the whole dataset; running statistics are not touched.
pub fn evaluate<T: Element, N: Network<T>>(net: &mut N, data: &Dataset) -> Result<Accuracy, TrainError> {
    check_compat(net.arch(), data)?;
    let (mut hit1, mut hit5) = (0usize, 0usize);
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let input = batch_tensor::<T, ChaCha8Rng>(data, chunk, None, &mut stream(0, Stream::Augment));
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let out = net.forward(&mut tape, x, BnMode::Eval)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        for r in ranks(tape.value(out.logits), &labels) {
            hit1 += (r < 1) as usize;
            hit5 += (r < 5) as usize;
        }
    }
    let n = data.len().max(1) as f64;
    Ok(Accuracy {
        top1: hit1 as f64 / n,
        top5: (data.num_classes >= 5).then_some(hit5 as f64 / n),
        samples: data.len(),
    })
}

fn check_compat(arch: &ArchSpec, data: &Dataset) -> Result<(), TrainError> {
    if arch.in_channels != data.channels || arch.num_classes != data.num_classes {
        return Err(TrainError::Config(format!(
            "model expects {} channels and {} classes, dataset has {} and {}",
            arch.in_channels, arch.num_classes, data.channels, data.num_classes
        )));
    }
    if data.is_empty() {
        return Err(TrainError::Config("empty dataset".into()));
    }
    Ok(())
}

#[derive(Debug)]
pub struct TrainRun<N> {
    pub network: N,
    pub metrics: Metrics,
}

struct Guide<'a, T> {
    teacher: &'a mut TeacherNetwork<T>,
    pairs: LayerPairSet,
    loss: LossConfig,
}

/// Trains a teacher from scratch on plain cross-entropy.
pub fn train_teacher<T: Element>(
    arch: &ArchSpec,
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<TrainRun<TeacherNetwork<T>>, TrainError> {
    cfg.validate()?;
    let mut network = build_teacher(arch, &mut stream(cfg.seed, Stream::Init))?;
    let metrics = run(&mut network, None, cfg, train, test)?;
    Ok(TrainRun { network, metrics })
}

/// Trains a student from scratch against cross-entropy plus λ times the
/// attention loss to `teacher`, which is frozen and run in eval mode.
pub fn distill_student<T: Element>(
    arch: &ArchSpec,
    teacher: &mut TeacherNetwork<T>,
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<TrainRun<StudentNetwork<T>>, TrainError> {
    cfg.validate()?;
    arch.check_half_width_of(teacher.arch())?;
    teacher.store_mut().freeze();
    let pairs = default_layer_pairs(arch, teacher.arch())?;
    let loss = match cfg.lambda {
        Some(lambda) => LossConfig { lambda },
        None => LossConfig::default_for(&pairs),
    };
    let mut network = build_student(arch, &mut stream(cfg.seed, Stream::Init))?;
    let guide = Guide { teacher, pairs, loss };
    let metrics = run(&mut network, Some(guide), cfg, train, test)?;
    Ok(TrainRun { network, metrics })
}

fn run<T: Element, N: Network<T>>(
    net: &mut N,
    mut guide: Option<Guide<'_, T>>,
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<Metrics, TrainError> {
    check_compat(net.arch(), train)?;
    check_compat(net.arch(), test)?;
    let expected = count_parameters(net.arch())?.total;
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut batcher = Batcher::new(train.len(), cfg.seed);
    let mut aug_rng = stream(cfg.seed, Stream::Augment);
    let flags = (cfg.augment.crop || cfg.augment.flip).then_some(cfg.augment);
    let no_pairs = LayerPairSet { pairs: Vec::new() };
    let started = Instant::now();
    let mut metrics = Metrics::new();

    for iter in 1..=cfg.total_iters {
        let lr = cfg.lr_at(iter - 1);
        let idx = batcher.next_batch(cfg.batch_size);
        let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
        let input = batch_tensor::<T, _>(train, &idx, flags, &mut aug_rng);

        let teacher_acts = match guide.as_mut() {
            Some(g) => {
                let mut t_tape = Tape::new();
                let x = t_tape.constant(input.clone());
                let out = g.teacher.forward(&mut t_tape, x, BnMode::Eval)?;
                out.group_outputs.iter().map(|&v| t_tape.value(v).clone()).collect()
            }
            None => Vec::new(),
        };
        let (pairs, loss_cfg) = match &guide {
            Some(g) => (&g.pairs, g.loss),
            None => (&no_pairs, LossConfig { lambda: 0.0 }),
        };

        let mut tape = Tape::new();
        let x = tape.constant(input);
        let out = net.forward(&mut tape, x, BnMode::Train)?;
        let parts = total_loss(&mut tape, out.logits, &labels, &out.group_outputs, &teacher_acts, pairs, loss_cfg)?;
        let scalar = |v| tape.value(v).item().to_f64_lossy();
        let (loss_cls, loss_ts, loss_total) = (scalar(parts.cls), scalar(parts.ts), scalar(parts.total));
        if !loss_total.is_finite() {
            return Err(TrainError::NonFinite { iter });
        }
        let train_acc = ranks(tape.value(out.logits), &labels).iter().filter(|&&r| r == 0).count() as f64 / labels.len() as f64;

        let grads = tape.backward(parts.total)?.into_param_map();
        let visited = sgd.step(net.store_mut(), &grads, lr)?;
        if visited != expected {
            return Err(TrainError::CountMismatch { visited, expected });
        }

        let eval_now = iter % cfg.eval_every == 0 || iter == cfg.total_iters;
        if eval_now || iter == 1 || iter % cfg.log_every == 0 {
            let test_acc = if eval_now { Some(evaluate(net, test)?.top1) } else { None };
            metrics.push(MetricRecord {
                iter,
                lr,
                loss_cls,
                loss_ts,
                loss_total,
                train_acc,
                test_acc,
                wall_ms: cfg.log_wall_time.then(|| started.elapsed().as_millis() as u64),
            })?;
        }
    }
    Ok(metrics)
}
