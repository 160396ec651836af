//! Acceptance criteria, one PASS/FAIL line each. Criterion 6(c) needs the
//! CIFAR-10 binaries in `$RRKD_CIFAR10_DIR` and is reported as SKIP otherwise.
//! Positional arguments select criteria by id prefix, e.g. `-- 1 8`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rrkd_cli::{cmd_distill, cmd_eval, cmd_train_teacher, load_data, RunConfig};
use rrkd_core::data::{read_records, write_records, DataError, Dataset, Split, CIFAR_RECORD_BYTES};
use rrkd_core::distill::{at_loss, LayerPairSet};
use rrkd_core::nn::{count_parameters, ArchSpec, Network, Variant};
use rrkd_core::recurrence::{build_student, build_teacher, make_schedule};
use rrkd_core::rng::{stream, Stream};
use rrkd_core::tensor::{Tape, Tensor};
use rrkd_core::train::{evaluate, Checkpoint, Metrics};
use rrkd_core::verify::{gradcheck_suite, shared_gradient_suite, FD_TOLERANCE, SHARED_TOLERANCE};

type Check = fn() -> Result<String, String>;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn param_counts() -> Result<String, String> {
    let total = |v, n| count_parameters(&ArchSpec::student(v, n, 10)).map(|c| c.total).map_err(|e| e.to_string());
    let windows = [
        (Variant::ReResNet3, 3, 72_000, 74_000),
        (Variant::ReResNet3, 12, 74_000, 76_000),
        (Variant::ReResNet1, 3, 120_500, 123_500),
        (Variant::ReResNet1, 6, 122_500, 125_500),
    ];
    let mut seen = Vec::new();
    for (v, n, lo, hi) in windows {
        let t = total(v, n)?;
        ensure((lo..=hi).contains(&t), || format!("{v} n={n}: {t} outside [{lo}, {hi}]"))?;
        seen.push(format!("{v} n={n} {t}"));
    }
    for n in 1..12 {
        let growth = total(Variant::ReResNet3, n + 1)? - total(Variant::ReResNet3, n)?;
        ensure(growth == 224, || format!("ReResNet-3 growth {n}->{}: {growth}", n + 1))?;
    }
    for v in Variant::ALL {
        let conv = |n| {
            count_parameters(&ArchSpec::student(v, n, 10))
                .map(|c| c.conv_scalars())
                .map_err(|e| e.to_string())
        };
        let base = conv(1)?;
        for n in 2..=6 {
            ensure(conv(n)? == base, || format!("{v}: conv count changes with n"))?;
        }
    }
    let teacher = count_parameters(&ArchSpec::teacher(3, 10)).map_err(|e| e.to_string())?.total;
    let rel = (teacher as f64 - 1_235_000.0).abs() / 1_235_000.0;
    ensure(rel <= 0.15, || format!("teacher {teacher} is {:.1}% from 1.235M", rel * 100.0))?;
    Ok(format!("{}; growth 224; teacher {teacher}", seen.join(", ")))
}

fn shared_gradients() -> Result<String, String> {
    let reports = shared_gradient_suite(7).map_err(|e| e.to_string())?;
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    ensure(reports.len() == 9, || format!("{} reports, expected 9", reports.len()))?;
    ensure(reports.iter().all(|r| r.passed) && worst < SHARED_TOLERANCE, || {
        format!("worst {worst:.3e}: {:?}", reports.iter().filter(|r| !r.passed).map(|r| &r.name).collect::<Vec<_>>())
    })?;
    Ok(format!("3 variants x n in 1..=3, worst rel err {worst:.2e}"))
}

fn gradient_checks() -> Result<String, String> {
    let reports = gradcheck_suite(7, None).map_err(|e| e.to_string())?;
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    ensure(failed.is_empty() && worst < FD_TOLERANCE, || format!("failed {failed:?}, worst {worst:.3e}"))?;
    Ok(format!("{} checks, worst rel err {worst:.2e}", reports.len()))
}

fn at_value(student: &[Tensor<f64>], teacher: &[Tensor<f64>]) -> f64 {
    let pairs = LayerPairSet {
        pairs: (0..student.len()).map(|i| (i, i)).collect(),
    };
    let mut tape = Tape::new();
    let vars: Vec<_> = student.iter().map(|s| tape.constant(s.clone())).collect();
    let loss = at_loss(&mut tape, &vars, teacher, &pairs).expect("compatible pairs");
    tape.value(loss).item()
}

fn attention_loss() -> Result<String, String> {
    let mut rng = stream(4, Stream::Check);
    let layer = |rng: &mut _, c, s| Tensor::<f64>::randn(&[3, c, s, s], 1.0, rng);
    let student = vec![layer(&mut rng, 4, 8), layer(&mut rng, 8, 4)];
    let teacher = vec![layer(&mut rng, 8, 8), layer(&mut rng, 16, 4)];

    let same = at_value(&student, &student);
    ensure(same == 0.0, || format!("identical activations give {same}"))?;

    let base = at_value(&student, &teacher);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let scales: Vec<f64> = (0..2).map(|_| rng.random_range(0.01..100.0)).collect();
        let rescale = |acts: &[Tensor<f64>]| -> Vec<Tensor<f64>> {
            acts.iter().zip(&scales).map(|(a, &k)| a.map(|v| v * k)).collect()
        };
        worst = worst.max((at_value(&rescale(&student), &teacher) - base).abs());
        worst = worst.max((at_value(&student, &rescale(&teacher)) - base).abs());
    }
    ensure(worst < 1e-12, || format!("rescaling changes loss by {worst:.3e}"))?;

    let s = Tensor::from_f64(&[1, 1, 1, 2], &[1.0, 0.0]).unwrap();
    let t = Tensor::from_f64(&[1, 1, 1, 2], &[0.0, 1.0]).unwrap();
    let hand = at_value(&[s], &[t]);
    ensure((hand - 2.0).abs() < 1e-15, || format!("fixture gives {hand}"))?;

    let mut peak: f64 = 0.0;
    for _ in 0..200 {
        let (c, side) = (rng.random_range(1..5), rng.random_range(1..7));
        let s = layer(&mut rng, c, side);
        let t = Tensor::randn(s.shape(), 1.0, &mut rng);
        peak = peak.max(at_value(&[s], &[t]));
    }
    ensure(peak <= 2.0, || format!("single-pair loss reached {peak}"))?;
    Ok(format!("zero on identity, rescale drift {worst:.1e}, fixture {hand}, max pair {peak:.3}"))
}

fn schedules() -> Result<String, String> {
    let cases = [
        (Variant::ReResNet1, 2, "A B A B A"),
        (Variant::ReResNet2, 2, "A A B B"),
        (Variant::ReResNet3, 3, "A A A"),
        (Variant::ReResNet2, 1, "A B"),
    ];
    for (v, n, want) in cases {
        let got = make_schedule(v, n).map_err(|e| e.to_string())?.timeline();
        ensure(got == want, || format!("{v} n={n}: {got:?}, expected {want:?}"))?;
    }
    Ok("A B A B A / A A B B / A A A / A B".into())
}

fn desk_config(out: &Path) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::load(&configs_dir().join("desk_synthetic.cfg"))?;
    cfg.set("out", &out.display().to_string())?;
    cfg.validate()?;
    Ok(cfg)
}

fn desk_training() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = desk_config(dir.path())?;
    let mut sink = Vec::new();
    let teacher_paths = cmd_train_teacher(&cfg, &mut sink).map_err(|e| e.to_string())?;
    let student_paths = cmd_distill(&cfg, &teacher_paths.checkpoint, &mut sink).map_err(|e| e.to_string())?;

    let (train, _) = load_data(&cfg).map_err(|e| e.to_string())?;
    let mut teacher = build_teacher::<f32, _>(&cfg.teacher_arch(), &mut stream(0, Stream::Init)).map_err(|e| e.to_string())?;
    Checkpoint::load(&teacher_paths.checkpoint)
        .and_then(|c| c.restore_into(teacher.store_mut()))
        .map_err(|e| e.to_string())?;
    let teacher_train = evaluate(&mut teacher, &train).map_err(|e| e.to_string())?.top1;
    let teacher_test = cmd_eval(&cfg, &teacher_paths.checkpoint, &mut sink).map_err(|e| e.to_string())?.accuracy.top1;
    let student_test = cmd_eval(&cfg, &student_paths.checkpoint, &mut sink).map_err(|e| e.to_string())?.accuracy.top1;

    let text = std::fs::read_to_string(&student_paths.metrics).map_err(|e| e.to_string())?;
    let metrics = Metrics::from_jsonl(&text).map_err(|e| e.to_string())?;
    let early = metrics.mean_loss_ts(1, 10).ok_or("no loss_ts near iteration 10")?;
    let late = metrics.mean_loss_ts(991, 1000).ok_or("no loss_ts near iteration 1000")?;

    let summary = format!(
        "teacher train {:.1}% test {:.1}%, student test {:.1}%, loss_ts {early:.4} -> {late:.4}",
        100.0 * teacher_train,
        100.0 * teacher_test,
        100.0 * student_test
    );
    ensure(cfg.train.total_iters <= 2_000 && teacher_train >= 0.95, || format!("(a) {summary}"))?;
    ensure(teacher_test - student_test <= 0.05, || format!("(b) accuracy gap: {summary}"))?;
    ensure(late <= 0.5 * early, || format!("(b) loss_ts drop: {summary}"))?;
    Ok(summary)
}

fn cifar_two_class() -> Option<Result<String, String>> {
    let dir = std::env::var_os("RRKD_CIFAR10_DIR")?;
    Some((|| {
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = RunConfig::load(&configs_dir().join("cifar10_2class.cfg"))?;
        cfg.set("data_dir", &PathBuf::from(dir).display().to_string())?;
        cfg.set("out", &out.path().display().to_string())?;
        let mut sink = Vec::new();
        let teacher = cmd_train_teacher(&cfg, &mut sink).map_err(|e| e.to_string())?;
        let student = cmd_distill(&cfg, &teacher.checkpoint, &mut sink).map_err(|e| e.to_string())?;
        let acc = cmd_eval(&cfg, &student.checkpoint, &mut sink).map_err(|e| e.to_string())?.accuracy.top1;
        ensure(acc >= 0.80, || format!("student test {:.1}%", 100.0 * acc))?;
        Ok(format!("student test {:.1}%", 100.0 * acc))
    })())
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = desk_config(&dir.path().join("teacher"))?;
    for (k, v) in [("total_iters", "30"), ("lr_decay_iters", "20"), ("eval_every", "15")] {
        cfg.set(k, v)?;
    }
    let mut sink = Vec::new();
    let teacher = cmd_train_teacher(&cfg, &mut sink).map_err(|e| e.to_string())?;
    let before = std::fs::read(&teacher.checkpoint).map_err(|e| e.to_string())?;
    let mut artifacts = Vec::new();
    for run in ["a", "b"] {
        cfg.set("out", &dir.path().join(run).display().to_string())?;
        let p = cmd_distill(&cfg, &teacher.checkpoint, &mut sink).map_err(|e| e.to_string())?;
        let read = |path: &Path| std::fs::read(path).map_err(|e| e.to_string());
        artifacts.push((read(&p.metrics)?, read(&p.checkpoint)?));
    }
    ensure(artifacts[0].0 == artifacts[1].0, || "metrics differ".into())?;
    ensure(artifacts[0].1 == artifacts[1].1, || "checkpoints differ".into())?;
    let after = std::fs::read(&teacher.checkpoint).map_err(|e| e.to_string())?;
    ensure(before == after, || "teacher checkpoint changed".into())?;
    Ok(format!(
        "metrics {} B and checkpoint {} B identical across runs",
        artifacts[0].0.len(),
        artifacts[0].1.len()
    ))
}

fn round_trips() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let arch = ArchSpec::student(Variant::ReResNet1, 3, 10);
    let net = build_student::<f32, _>(&arch, &mut stream(3, Stream::Init)).map_err(|e| e.to_string())?;
    let path = dir.path().join("s.ckpt");
    Checkpoint::from_store(net.store()).save(&path).map_err(|e| e.to_string())?;
    let mut other = build_student::<f32, _>(&arch, &mut stream(4, Stream::Init)).map_err(|e| e.to_string())?;
    Checkpoint::load(&path)
        .and_then(|c| c.restore_into(other.store_mut()))
        .map_err(|e| e.to_string())?;
    let again = Checkpoint::from_store(other.store()).to_bytes();
    ensure(again == std::fs::read(&path).map_err(|e| e.to_string())?, || "checkpoint bytes differ".into())?;

    let mut bytes = vec![0u8; 3 * CIFAR_RECORD_BYTES];
    bytes[CIFAR_RECORD_BYTES] = 4;
    let truncated = dir.path().join("truncated.bin");
    std::fs::write(&truncated, &bytes[..bytes.len() - 1]).map_err(|e| e.to_string())?;
    match read_records(&truncated, Split::Train) {
        Err(DataError::FileSize { expected, actual, .. })
            if actual == bytes.len() - 1 && expected % CIFAR_RECORD_BYTES == 0 => {}
        other => return Err(format!("truncated file: {other:?}")),
    }
    bytes[2 * CIFAR_RECORD_BYTES] = 10;
    let mislabeled = dir.path().join("mislabeled.bin");
    std::fs::write(&mislabeled, &bytes).map_err(|e| e.to_string())?;
    match read_records(&mislabeled, Split::Train) {
        Err(DataError::Label { offset, label: 10, .. }) if offset == 2 * CIFAR_RECORD_BYTES => {}
        other => return Err(format!("mislabeled file: {other:?}")),
    }

    let ds = Dataset::new(
        (0..2 * 3072).map(|i| (i % 256) as f32 / 255.0).collect(),
        vec![7, 2],
        10,
        3,
        32,
        Split::Test,
    )
    .map_err(|e| e.to_string())?;
    let written = dir.path().join("rt.bin");
    write_records(&ds, &written).map_err(|e| e.to_string())?;
    let back = read_records(&written, Split::Test).map_err(|e| e.to_string())?;
    ensure(back == ds, || "CIFAR record round trip differs".into())?;
    Ok("checkpoint bytes stable; truncated and label errors raised; records round-trip".into())
}

fn main() {
    let checks: [(&str, &str, Check); 7] = [
        ("1", "parameter counts", param_counts),
        ("2", "shared-kernel gradients", shared_gradients),
        ("3", "finite-difference gradients", gradient_checks),
        ("4", "attention loss properties", attention_loss),
        ("5", "tying schedules", schedules),
        ("6ab", "desk-scale training", desk_training),
        ("7", "determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut results = Vec::new();
    let mut run = |id: &str, name: &str, f: &dyn Fn() -> Option<Result<String, String>>| {
        if !filters.is_empty() && !filters.iter().any(|f| id.starts_with(f.as_str())) {
            return;
        }
        let start = Instant::now();
        let verdict = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(Some(Ok(d))) => Verdict::Pass(d),
            Ok(Some(Err(d))) => Verdict::Fail(d),
            Ok(None) => Verdict::Skip("not run: set RRKD_CIFAR10_DIR to the CIFAR-10 binary directory".into()),
            Err(_) => Verdict::Fail("panicked".into()),
        };
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => ("FAIL", d),
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {id:<4} {name:<28} {secs:>7.1}s  {detail}");
        results.push(verdict);
    };
    for (id, name, f) in checks {
        run(id, name, &|| Some(f()));
    }
    run("6c", "CIFAR-10 two-class subset", &cifar_two_class);
    run("8", "format round trips", &|| Some(round_trips()));

    let failed = results.iter().filter(|v| matches!(v, Verdict::Fail(_))).count();
    let skipped = results.iter().filter(|v| matches!(v, Verdict::Skip(_))).count();
    println!(
        "acceptance: {} passed, {failed} failed, {skipped} skipped",
        results.len() - failed - skipped
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
