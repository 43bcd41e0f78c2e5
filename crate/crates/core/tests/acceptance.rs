//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line to
//! stderr, uncaptured, and the test fails if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::io::Write as _;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgfd::graphseq::{load_windows, permute_window, random_window, save_windows, Dataset, GraphWindow, Manifest};
use tgfd::model::{forward, ModelDims, ModelParams, Pooling};
use tgfd::sim::{gen_dataset, gen_topology, gen_window, propagation_oracle, FaultClass, ScenarioConfig, TopologyConfig};
use tgfd::train::{
    evaluate, load_checkpoint, save_checkpoint, stratified_split, train, Checkpoint, EpochRecord, TrainConfig,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn report(number: usize, name: &str, o: &Outcome) {
    let status = if o.passed { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {number} {status}: {name} ({})", o.detail);
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_tgfd"))
        .args(["gradcheck", "--nodes", "6", "--steps", "4", "--feat-dim", "5", "--hidden-dim", "8", "--classes", "3"])
        .args(["--step", "1e-5", "--threshold", "1e-4", "--pooling", "both"])
        .output()
        .expect("binary runs");
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let verdict = text.lines().last().unwrap_or("").to_string();
    let mean_and_attention = text.contains("mean") && text.contains("attention");
    outcome(
        out.status.success() && mean_and_attention && elapsed < Duration::from_secs(60),
        format!("{verdict} in {:.2}s", elapsed.as_secs_f64()),
    )
}

fn random_model(seed: u64, window: &GraphWindow, pooling: Pooling) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ModelDims {
        feat_dim: window.feat_dim(),
        hidden_dim: rng.gen_range(2..10),
        num_classes: window.label().max(1) + 1 + rng.gen_range(0..2),
        pooling,
    };
    ModelParams::init(dims, seed).unwrap()
}

fn random_setup(seed: u64, pooling: Pooling) -> (GraphWindow, ModelParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = rng.gen_range(1..10);
    let t = rng.gen_range(1..6);
    let d = rng.gen_range(1..6);
    let c = rng.gen_range(2..5);
    let p = rng.gen_range(0.0..0.8);
    let window = random_window(seed, n, t, d, c, p);
    let params = random_model(seed, &window, pooling);
    (window, params)
}

fn structural_invariants() -> Outcome {
    let mut worst_alpha = 0.0f64;
    let mut worst_y = 0.0f64;
    let mut min_loss = f64::INFINITY;
    for seed in 0..100u64 {
        let pooling = if seed % 2 == 0 { Pooling::Mean } else { Pooling::Attention };
        let (window, params) = random_setup(seed, pooling);
        let cache = forward(&window, &params).unwrap();
        for step in &cache.attention {
            for alpha in step.alpha.iter().filter(|a| !a.is_empty()) {
                worst_alpha = worst_alpha.max((alpha.iter().sum::<f64>() - 1.0).abs());
            }
        }
        worst_y = worst_y.max((cache.y_hat.iter().sum::<f64>() - 1.0).abs());
        min_loss = min_loss.min(cache.loss);
    }
    outcome(
        worst_alpha <= 1e-9 && worst_y <= 1e-9 && min_loss >= 0.0,
        format!("attention {worst_alpha:.1e}, y_hat {worst_y:.1e}, min loss {min_loss:.3e}"),
    )
}

fn permutation_invariance() -> Outcome {
    use rand::seq::SliceRandom;
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let (window, params) = random_setup(1000 + seed, Pooling::Mean);
        let mut perm: Vec<usize> = (0..window.num_nodes()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted = permute_window(&window, &perm).unwrap();
        let a = forward(&window, &params).unwrap().loss;
        let b = forward(&permuted, &params).unwrap().loss;
        worst = worst.max((a - b).abs());
    }
    outcome(worst <= 1e-9, format!("max loss difference {worst:.1e} over 50 windows"))
}

fn metric_oracles() -> Outcome {
    let mut failures = Vec::new();
    for seed in 0..200u64 {
        failures.extend(common::oracle_mismatches(&common::random_case(seed)).into_iter().map(|m| format!("case {seed}: {m}")));
    }
    let detail = match failures.first() {
        None => "200 cases agree within 1e-12".to_string(),
        Some(first) => format!("{} mismatches, first {first}", failures.len()),
    };
    outcome(failures.is_empty(), detail)
}

/// The four-class simulated dataset and its fixed 800/200 split.
fn simulated_split() -> (Dataset, Dataset) {
    let sim = gen_dataset(&TopologyConfig::default(), &ScenarioConfig::default(), 250, 7).unwrap();
    let labels: Vec<usize> = sim.dataset.windows.iter().map(GraphWindow::label).collect();
    let (train_idx, test_idx) = stratified_split(&labels, 0.2, 99);
    (sim.dataset.subset(&train_idx), sim.dataset.subset(&test_idx))
}

fn learn_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        hidden_dim: 16,
        batch_size: 16,
        max_epochs: 30,
        patience: 0,
        seed: 0,
        ..TrainConfig::default()
    }
}

fn learnability(train_set: &Dataset, test_set: &Dataset) -> Outcome {
    let start = Instant::now();
    let ckpt = train(train_set, &learn_config()).unwrap();
    let elapsed = start.elapsed();
    let report = evaluate(&ckpt.params, test_set).unwrap();
    outcome(
        train_set.len() == 800
            && test_set.len() == 200
            && report.accuracy >= 0.85
            && report.macro_f1 >= 0.80
            && elapsed < Duration::from_secs(600),
        format!(
            "accuracy {:.3}, macro-F1 {:.3}, {} epochs in {:.1}s",
            report.accuracy,
            report.macro_f1,
            ckpt.history.len(),
            elapsed.as_secs_f64()
        ),
    )
}

/// CASCADE and COMMON_CAUSE only, relabeled 0 and 1, optionally with every
/// call edge removed.
fn two_class(dataset: &Dataset, ablate: bool) -> Dataset {
    let cascade = FaultClass::Cascade.index();
    let common = FaultClass::CommonCause.index();
    let manifest = Manifest {
        num_classes: 2,
        class_names: vec!["CASCADE".into(), "COMMON_CAUSE".into()],
        feat_names: dataset.manifest.feat_names.clone(),
    };
    let windows = dataset
        .windows
        .iter()
        .filter(|w| w.label() == cascade || w.label() == common)
        .map(|w| {
            let w = w.with_label(usize::from(w.label() == common));
            if ablate {
                w.without_edges()
            } else {
                w
            }
        })
        .collect();
    Dataset::new(manifest, windows).unwrap()
}

fn joint_modeling(train_set: &Dataset, test_set: &Dataset) -> Outcome {
    let accuracy = |ablate: bool| {
        let ckpt = train(&two_class(train_set, ablate), &learn_config()).unwrap();
        evaluate(&ckpt.params, &two_class(test_set, ablate)).unwrap().accuracy
    };
    let full = accuracy(false);
    let ablated = accuracy(true);
    let gap = 100.0 * (full - ablated);
    outcome(
        gap >= 10.0,
        format!("full {full:.3}, structure-ablated {ablated:.3}, gap {gap:.1} points"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let bin = env!("CARGO_BIN_EXE_tgfd");
    let simulate = Command::new(bin)
        .args(["simulate", "--per-class", "10", "--seed", "3", "--quiet", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    if !simulate.success() {
        return outcome(false, "simulate failed");
    }
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(bin)
            .args(["train", "--epochs", "3", "--hidden-dim", "8", "--lr", "0.01", "--seed", "5", "--quiet", "--data"])
            .arg(&data)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        if !status.success() {
            return outcome(false, "train failed");
        }
        bytes.push(std::fs::read(out.join("model.ckpt")).unwrap());
    }
    let same_checkpoint = bytes[0] == bytes[1];

    let dataset = Dataset::load_dir(&data).unwrap();
    let config = TrainConfig {
        max_epochs: 3,
        hidden_dim: 8,
        ..TrainConfig::default()
    };
    let ckpt = train(&dataset, &config).unwrap();
    let in_memory = evaluate(&ckpt.params, &dataset).unwrap();
    let path = dir.path().join("mem.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let reloaded = evaluate(&loaded.params, &dataset).unwrap();
    let same_report = loaded == ckpt && reloaded == in_memory && reloaded.to_json() == in_memory.to_json();
    outcome(
        same_checkpoint && same_report,
        format!("checkpoints identical: {same_checkpoint}, reloaded report identical: {same_report}"),
    )
}

fn simulator_oracle() -> Outcome {
    let config = ScenarioConfig::default();
    let mut bad = Vec::new();
    for seed in 0..100u64 {
        let topo = gen_topology(12, 3, 2, seed).unwrap();
        let (normal, _) = gen_window(&topo, FaultClass::Normal, &config, seed, "n").unwrap();
        let (cascade, scenario) = gen_window(&topo, FaultClass::Cascade, &config, seed, "c").unwrap();
        let drawn = ScenarioConfig {
            fault_onset_step: scenario.onset,
            fault_magnitude: scenario.magnitude,
            ..config.clone()
        };
        let oracle = propagation_oracle(&topo, &scenario.roots, &drawn).unwrap().affected_per_step();
        let injected: Vec<Vec<usize>> = (0..cascade.num_steps())
            .map(|t| (0..cascade.num_nodes()).filter(|&i| cascade.feature(t, i) != normal.feature(t, i)).collect())
            .collect();
        let monotone = injected.windows(2).all(|pair| {
            let a: BTreeSet<usize> = pair[0].iter().copied().collect();
            let b: BTreeSet<usize> = pair[1].iter().copied().collect();
            a.is_subset(&b)
        });
        if injected != oracle || !monotone {
            bad.push(seed);
        }
    }
    outcome(bad.is_empty(), format!("100 scenarios, mismatching seeds {bad:?}"))
}

fn random_checkpoint(seed: u64) -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pooling = if rng.gen_bool(0.5) { Pooling::Mean } else { Pooling::Attention };
    let dims = ModelDims {
        feat_dim: rng.gen_range(1..7),
        hidden_dim: rng.gen_range(1..9),
        num_classes: rng.gen_range(2..6),
        pooling,
    };
    let history = (1..rng.gen_range(1..6))
        .map(|epoch| EpochRecord {
            epoch,
            train_loss: rng.gen_range(0.0..3.0),
            val_loss: rng.gen_bool(0.5).then(|| rng.gen_range(0.0..3.0)),
        })
        .collect::<Vec<_>>();
    Checkpoint {
        params: ModelParams::init(dims, seed).unwrap(),
        config: TrainConfig {
            hidden_dim: dims.hidden_dim,
            pooling,
            learning_rate: rng.gen_range(1e-4..1e-1),
            seed,
            ..TrainConfig::default()
        },
        epoch: history.len(),
        history,
    }
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = Vec::new();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let windows: Vec<GraphWindow> = (0..rng.gen_range(1..5))
            .map(|k| {
                let n = rng.gen_range(1..8);
                let t = rng.gen_range(1..5);
                let d = rng.gen_range(1..4);
                random_window(seed * 10 + k, n, t, d, 4, rng.gen_range(0.0..0.6))
            })
            .collect();
        let a = dir.path().join(format!("{seed}a.jsonl"));
        let b = dir.path().join(format!("{seed}b.jsonl"));
        save_windows(&windows, &a).unwrap();
        let loaded = load_windows(&a).unwrap();
        save_windows(&loaded, &b).unwrap();
        let jsonl_ok = loaded == windows && std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();

        let ckpt = random_checkpoint(seed);
        let a = dir.path().join(format!("{seed}a.ckpt"));
        let b = dir.path().join(format!("{seed}b.ckpt"));
        save_checkpoint(&ckpt, &a).unwrap();
        let loaded = load_checkpoint(&a).unwrap();
        save_checkpoint(&loaded, &b).unwrap();
        let ckpt_ok = loaded == ckpt && std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
        if !(jsonl_ok && ckpt_ok) {
            bad.push(seed);
        }
    }
    outcome(bad.is_empty(), format!("50 datasets and 50 checkpoints, failing seeds {bad:?}"))
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    let mut run = |number: usize, name: &str, o: Outcome| {
        report(number, name, &o);
        results.push((number, o.passed));
    };
    run(1, "gradient fidelity", gradient_fidelity());
    run(2, "structural invariants", structural_invariants());
    run(3, "permutation invariance", permutation_invariance());
    run(4, "metric oracle equivalence", metric_oracles());
    let (train_set, test_set) = simulated_split();
    run(5, "synthetic learnability", learnability(&train_set, &test_set));
    run(6, "joint temporal and structural modeling", joint_modeling(&train_set, &test_set));
    run(7, "determinism", determinism());
    run(8, "simulator and oracle agree", simulator_oracle());
    run(9, "format round-trips", round_trips());
    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
