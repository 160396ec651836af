use std::collections::BTreeMap;

use proptest::prelude::*;
use rrkd_core::data::{subset, synthetic_dataset};
use rrkd_core::distill::{at_loss, attention_map_values, LayerPairSet};
use rrkd_core::nn::{count_parameters, ArchSpec, Network, Variant};
use rrkd_core::recurrence::build_student;
use rrkd_core::rng::{stream, Stream};
use rrkd_core::tensor::{ParamStore, Tape, Tensor};
use rrkd_core::train::{lr_at, standardize, ChannelStats, Checkpoint, MetricRecord, Metrics, Sgd};

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::ReResNet1), Just(Variant::ReResNet2), Just(Variant::ReResNet3)]
}

fn acts(seed: u64, n: usize, c: usize, side: usize) -> Tensor<f64> {
    Tensor::randn(&[n, c, side, side], 1.0, &mut stream(seed, Stream::Check))
}

fn loss(s: &Tensor<f64>, t: &Tensor<f64>) -> f64 {
    let mut tape = Tape::new();
    let v = tape.constant(s.clone());
    let pairs = LayerPairSet { pairs: vec![(0, 0)] };
    let l = at_loss(&mut tape, &[v], std::slice::from_ref(t), &pairs).unwrap();
    tape.value(l).item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_maps_are_unit_or_zero(seed in 0u64..1000, n in 1usize..4, c in 1usize..5, side in 1usize..6, zero in any::<bool>()) {
        let x = if zero { Tensor::zeros(&[n, c, side, side]) } else { acts(seed, n, c, side) };
        let m = attention_map_values(&x).unwrap();
        prop_assert_eq!(m.shape(), &[n, side * side][..]);
        for row in m.data().chunks(side * side) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if zero {
                prop_assert_eq!(norm, 0.0);
            } else {
                prop_assert!((norm - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pair_loss_is_bounded_and_scale_free(seed in 0u64..1000, n in 1usize..4, cs in 1usize..5, ct in 1usize..5, side in 1usize..6, k in 0.01f64..100.0) {
        let s = acts(seed, n, cs, side);
        let t = acts(seed + 7919, n, ct, side);
        let l = loss(&s, &t);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&l));
        prop_assert!(loss(&s, &s).abs() < 1e-15);
        prop_assert!((loss(&s.map(|v| v * k), &t) - l).abs() < 1e-12);
        prop_assert!((loss(&s, &t.map(|v| -v * k)) - l).abs() < 1e-12);
    }

    #[test]
    fn registry_size_equals_closed_form_count(v in variant(), n in 1usize..5) {
        let arch = ArchSpec::student(v, n, 10);
        let net = build_student::<f32, _>(&arch, &mut stream(1, Stream::Init)).unwrap();
        prop_assert_eq!(net.store().trainable_scalars(), count_parameters(&arch).unwrap().total);
    }

    #[test]
    fn checkpoints_round_trip_bytes(v in variant(), n in 1usize..3, seed in 0u64..100) {
        let arch = ArchSpec::student(v, n, 10);
        let a = build_student::<f64, _>(&arch, &mut stream(seed, Stream::Init)).unwrap();
        let bytes = Checkpoint::from_store(a.store()).to_bytes();
        let mut b = build_student::<f64, _>(&arch, &mut stream(seed + 1, Stream::Init)).unwrap();
        Checkpoint::from_bytes(&bytes).unwrap().restore_into(b.store_mut()).unwrap();
        prop_assert_eq!(Checkpoint::from_store(b.store()).to_bytes(), bytes);
    }

    #[test]
    fn sgd_skips_frozen_and_decays_geometrically(w0 in -5.0f64..5.0, lr in 0.001f64..1.0, wd in 0.0f64..0.1, steps in 1i32..8) {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::from_f64(&[1], &[w0]).unwrap()).unwrap();
        store.add("frozen", Tensor::from_f64(&[1], &[w0]).unwrap()).unwrap();
        store.by_name_mut("frozen").unwrap().trainable = false;
        let grads = BTreeMap::from([("w".to_string(), Tensor::zeros(&[1]))]);
        let mut opt = Sgd::new(0.0, wd);
        for _ in 0..steps {
            prop_assert_eq!(opt.step(&mut store, &grads, lr).unwrap(), 1);
        }
        let expect = w0 * (1.0 - lr * wd).powi(steps);
        prop_assert!((store.by_name("w").unwrap().tensor.data()[0] - expect).abs() < 1e-12);
        prop_assert_eq!(store.by_name("frozen").unwrap().tensor.data()[0], w0);
    }

    #[test]
    fn lr_never_increases(points in proptest::collection::btree_set(1usize..10_000, 0..4), a in 0usize..12_000, b in 0usize..12_000) {
        let points: Vec<usize> = points.into_iter().collect();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(lr_at(hi, 0.1, &points, 10.0) <= lr_at(lo, 0.1, &points, 10.0));
        prop_assert!(lr_at(usize::MAX, 0.1, &points, 10.0) == 0.1 / 10f64.powi(points.len() as i32));
    }

    #[test]
    fn subsets_are_balanced_dense_and_repeatable(seed in 0u64..50, keep in proptest::sample::subsequence(vec![0usize, 1, 2, 3, 4, 5], 1..4), per in 1usize..6) {
        let data = synthetic_dataset(seed, 8, 6, 4);
        let a = subset(&data, &keep, per, seed).unwrap();
        prop_assert_eq!(&a, &subset(&data, &keep, per, seed).unwrap());
        prop_assert_eq!(a.len(), keep.len() * per);
        prop_assert_eq!(a.num_classes, keep.len());
        prop_assert!(a.class_counts().iter().all(|&c| c == per));
    }

    #[test]
    fn standardized_training_split_is_centered(seed in 0u64..50) {
        let (train, test) = (synthetic_dataset(seed, 5, 3, 6), synthetic_dataset(seed + 100, 5, 3, 6));
        let (tr, _, _) = standardize(&train, &test);
        let s = ChannelStats::of(&tr);
        prop_assert!(s.mean.iter().all(|m| m.abs() < 1e-6));
        prop_assert!(s.std.iter().all(|d| (d - 1.0).abs() < 1e-4));
    }

    #[test]
    fn metrics_reject_non_increasing_iterations(iters in proptest::collection::vec(1usize..50, 1..10)) {
        let mut m = Metrics::new();
        let mut last = 0;
        for it in iters {
            let r = MetricRecord { iter: it, lr: 0.1, loss_cls: 1.0, loss_ts: 0.0, loss_total: 1.0, train_acc: 0.0, test_acc: None, wall_ms: None };
            prop_assert_eq!(m.push(r).is_ok(), it > last);
            last = last.max(it);
        }
    }
}
