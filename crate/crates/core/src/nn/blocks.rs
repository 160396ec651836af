//! BRC (BatchNorm → ReLU → Conv) units and the layers around them.

use rand::Rng;

use super::error::ModelError;
use super::init::he_init;
use crate::tensor::{BnMode, Element, ParamId, ParamStore, RunningStats, StatsId, Tape, Tensor, Var, BN_EPS, BN_MOMENTUM};

/// Affine parameters and running statistics of one BN site.
#[derive(Clone, Debug)]
pub struct BnSite {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: StatsId,
}

impl BnSite {
    pub fn new<T: Element>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Result<Self, ModelError> {
        Ok(Self {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::ones(&[channels]))?,
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[channels]))?,
            stats: store.add_stats(prefix.to_string(), RunningStats::identity(channels))?,
        })
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: BnMode,
    ) -> Result<Var, ModelError> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let eps = T::from_f64_lossy(BN_EPS);
        let momentum = T::from_f64_lossy(BN_MOMENTUM);
        Ok(tape.batchnorm(x, gamma, beta, store.stats_mut(self.stats), mode, eps, momentum)?)
    }
}

/// BN → ReLU → 3×3 conv, channel-preserving. The kernel is shared by every
/// application; each application owns one BN bank entry.
#[derive(Clone, Debug)]
pub struct BrcUnit {
    pub name: String,
    pub channels: usize,
    /// One kernel when tied; one per bank entry for an untied clone.
    pub kernels: Vec<ParamId>,
    pub bn_bank: Vec<BnSite>,
}

impl BrcUnit {
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        uses: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let shape = [channels, channels, 3, 3];
        let kernel = store.add(format!("{name}.conv"), he_init(&shape, channels * 9, rng))?;
        let bn_bank = (0..uses)
            .map(|k| BnSite::new(store, &format!("{name}.bn{k}"), channels))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            name: name.to_string(),
            channels,
            kernels: vec![kernel],
            bn_bank,
        })
    }

    pub fn is_tied(&self) -> bool {
        self.kernels.len() == 1
    }

    fn kernel_for(&self, bank_index: usize) -> ParamId {
        self.kernels[bank_index.min(self.kernels.len() - 1)]
    }

    /// Copy of this unit whose every application gets a private kernel
    /// holding the current shared value; BN entries are shared with `self`.
    pub fn untie<T: Element>(&self, store: &mut ParamStore<T>) -> Result<Self, ModelError> {
        let value = store.param(self.kernels[0]).tensor.clone();
        let kernels = (0..self.bn_bank.len())
            .map(|k| store.add(format!("{}.conv@{k}", self.name), value.clone()))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            kernels,
            ..self.clone()
        })
    }
}

pub fn brc_forward<T: Element>(
    unit: &BrcUnit,
    tape: &mut Tape<T>,
    store: &mut ParamStore<T>,
    x: Var,
    bank_index: usize,
    mode: BnMode,
) -> Result<Var, ModelError> {
    let site = unit.bn_bank.get(bank_index).ok_or_else(|| ModelError::BankIndex {
        unit: unit.name.clone(),
        index: bank_index,
        len: unit.bn_bank.len(),
    })?;
    let h = site.forward(tape, store, x, mode)?;
    let h = tape.relu(h)?;
    let kernel = tape.param(store, unit.kernel_for(bank_index));
    Ok(tape.conv2d(h, kernel, 1, 1)?)
}

/// `body(x) + x`; the body must preserve shape.
pub fn residual_step<T, F>(tape: &mut Tape<T>, x: Var, body: F) -> Result<Var, ModelError>
where
    T: Element,
    F: FnOnce(&mut Tape<T>, Var) -> Result<Var, ModelError>,
{
    let fx = body(tape, x)?;
    if tape.shape(fx) != tape.shape(x) {
        return Err(ModelError::ResidualShape {
            before: tape.shape(x).to_vec(),
            after: tape.shape(fx).to_vec(),
        });
    }
    Ok(tape.add(fx, x)?)
}

/// BN → ReLU → 3×3 stride-2 conv between groups of different spatial size.
#[derive(Clone, Debug)]
pub struct TransitionConv {
    pub bn: BnSite,
    pub kernel: ParamId,
}

impl TransitionConv {
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            bn: BnSite::new(store, &format!("{name}.bn"), c_in)?,
            kernel: store.add(format!("{name}.conv"), he_init(&[c_out, c_in, 3, 3], c_in * 9, rng))?,
        })
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: BnMode,
    ) -> Result<Var, ModelError> {
        let h = self.bn.forward(tape, store, x, mode)?;
        let h = tape.relu(h)?;
        let k = tape.param(store, self.kernel);
        Ok(tape.conv2d(h, k, 2, 1)?)
    }
}

/// Final BN → ReLU → global average pool → linear.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub bn: BnSite,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ClassifierHead {
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        width: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            bn: BnSite::new(store, "head.bn", width)?,
            weight: store.add("head.fc.weight", he_init(&[width, classes], width, rng))?,
            bias: store.add("head.fc.bias", Tensor::zeros(&[classes]))?,
        })
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: BnMode,
    ) -> Result<Var, ModelError> {
        let h = self.bn.forward(tape, store, x, mode)?;
        let h = tape.relu(h)?;
        let pooled = tape.global_avg_pool(h)?;
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        Ok(tape.linear(pooled, w, b)?)
    }
}

/// 3×3 stride-1 convolution from the image channels to the first width.
pub fn stem_forward<T: Element>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    kernel: ParamId,
    x: Var,
) -> Result<Var, ModelError> {
    let expected = store.param(kernel).tensor.shape()[1];
    let got = tape.shape(x).get(1).copied().unwrap_or(0);
    if expected != got {
        return Err(ModelError::ChannelMismatch { expected, got });
    }
    let k = tape.param(store, kernel);
    Ok(tape.conv2d(x, k, 1, 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn unit_with_bank(uses: usize) -> (ParamStore<f64>, BrcUnit) {
        let mut store = ParamStore::new();
        let unit = BrcUnit::new(&mut store, "u", 4, uses, &mut stream(1, Stream::Init)).unwrap();
        (store, unit)
    }

    #[test]
    fn zero_affine_bn_gives_zero_output() {
        let (mut store, unit) = unit_with_bank(2);
        for name in ["u.bn0.gamma", "u.bn0.beta"] {
            store.by_name_mut(name).unwrap().tensor = Tensor::zeros(&[4]);
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::randn(&[2, 4, 5, 5], 1.0, &mut stream(2, Stream::Data)));
        let y = brc_forward(&unit, &mut tape, &mut store, x, 0, BnMode::Train).unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 5, 5]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_bank_entries_give_identical_outputs() {
        let (mut store, unit) = unit_with_bank(3);
        let x = Tensor::randn(&[2, 4, 5, 5], 1.0, &mut stream(3, Stream::Data));
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let a = brc_forward(&unit, &mut tape, &mut store, xv, 0, BnMode::Train).unwrap();
        let b = brc_forward(&unit, &mut tape, &mut store, xv, 2, BnMode::Train).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
    }

    #[test]
    fn bank_index_out_of_range() {
        let (mut store, unit) = unit_with_bank(2);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 4, 3, 3]));
        let err = brc_forward(&unit, &mut tape, &mut store, x, 2, BnMode::Train).unwrap_err();
        assert_eq!(
            err,
            ModelError::BankIndex {
                unit: "u".into(),
                index: 2,
                len: 2
            }
        );
    }

    #[test]
    fn one_kernel_regardless_of_uses() {
        for uses in [1, 3, 13] {
            let (store, unit) = unit_with_bank(uses);
            assert_eq!(unit.kernels.len(), 1);
            assert_eq!(unit.bn_bank.len(), uses);
            assert_eq!(store.trainable_scalars(), 4 * 4 * 9 + uses * 8);
        }
    }

    #[test]
    fn residual_with_zero_body_is_identity_and_identity_body_doubles() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::randn(&[1, 2, 3, 3], 1.0, &mut stream(4, Stream::Data)));
        let zero = tape.constant(Tensor::zeros(&[2, 2, 3, 3]));
        let y = residual_step(&mut tape, x, |t, v| Ok(t.conv2d(v, zero, 1, 1)?)).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let mut eye = Tensor::zeros(&[2, 2, 1, 1]);
        eye.data_mut()[0] = 1.0;
        eye.data_mut()[3] = 1.0;
        let eye = tape.constant(eye);
        let y = residual_step(&mut tape, x, |t, v| Ok(t.conv2d(v, eye, 1, 0)?)).unwrap();
        let doubled = tape.value(x).map(|v| 2.0 * v);
        assert_eq!(tape.value(y), &doubled);
    }

    #[test]
    fn residual_rejects_shape_change() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let k = tape.constant(Tensor::zeros(&[2, 2, 3, 3]));
        let err = residual_step(&mut tape, x, |t, v| Ok(t.conv2d(v, k, 2, 1)?)).unwrap_err();
        assert!(matches!(err, ModelError::ResidualShape { .. }));
    }
}
