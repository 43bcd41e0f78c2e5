use std::path::Path;
use std::process::{Command, Output};

use tgfd::graphseq::{random_window, Dataset, Manifest};

fn tgfd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tgfd")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_counts_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = tgfd(&[
            "simulate", "--services", "12", "--steps", "8", "--per-class", "200", "--seed", "7", "--quiet", "--out",
            path(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ds = Dataset::load_dir(&a).unwrap();
    assert_eq!(ds.len(), 800);
    assert_eq!(ds.manifest.num_classes, 4);
    for c in 0..4 {
        assert_eq!(ds.windows.iter().filter(|w| w.label() == c).count(), 200);
    }
    for file in ["windows.jsonl", "manifest.json", "ground_truth.jsonl"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "simulate");
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn zero_per_class_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tgfd(&["simulate", "--per-class", "0", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

fn single_window_dataset(dir: &Path) {
    let w = random_window(3, 4, 3, 3, 3, 0.4);
    let manifest = Manifest {
        num_classes: 3,
        class_names: vec!["a".into(), "b".into(), "c".into()],
        feat_names: vec!["x".into(), "y".into(), "z".into()],
    };
    Dataset::new(manifest, vec![w]).unwrap().save_dir(dir).unwrap();
}

#[test]
fn memorized_window_evaluates_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    let report = dir.path().join("report");
    single_window_dataset(&data);
    let o = tgfd(&[
        "train", "--data", path(&data), "--hidden-dim", "8", "--lr", "0.05", "--epochs", "50", "--batch-size", "1",
        "--patience", "0", "--quiet", "--out", path(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let history = std::fs::read_to_string(model.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss\n"));
    assert_eq!(history.lines().count(), 51);

    let ckpt = model.join("model.ckpt");
    let o = tgfd(&["eval", "--checkpoint", path(&ckpt), "--data", path(&data), "--quiet", "--out", path(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["accuracy"], 1.0);
    let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    let mut want = ["accuracy", "precision", "recall", "f1", "auc_roc", "macro_f1", "micro_f1", "mcc", "per_class"];
    want.sort_unstable();
    let mut keys = keys;
    keys.sort_unstable();
    assert_eq!(keys, want);
    let table = std::fs::read_to_string(report.join("report.txt")).unwrap();
    let header = table.lines().next().unwrap();
    let order = ["Accuracy", "Precision", "Recall", "F1", "AUC-ROC", "Macro-F1", "Micro-F1", "MCC"];
    let positions: Vec<usize> = order.iter().map(|h| header.find(&format!(" {h}")).or(header.find(h)).unwrap()).collect();
    assert!(positions.windows(2).all(|p| p[0] < p[1]), "{header}");
}

#[test]
fn missing_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    single_window_dataset(dir.path());
    let o = tgfd(&[
        "eval", "--checkpoint", path(&dir.path().join("nope.ckpt")), "--data", path(dir.path()), "--out",
        path(&dir.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn default_gradcheck_passes_and_repeats() {
    let a = tgfd(&["gradcheck"]);
    assert!(a.status.success(), "{}", stdout(&a));
    let text = stdout(&a);
    let max: f64 = text
        .lines()
        .last()
        .and_then(|l| l.split("max ").nth(1))
        .and_then(|s| s.split(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(max <= 1e-4, "{text}");
    assert!(text.lines().last().unwrap().starts_with("PASS"));
    assert_eq!(stdout(&tgfd(&["gradcheck"])), text);
}

#[test]
fn zero_threshold_gradcheck_fails() {
    let o = tgfd(&["gradcheck", "--threshold", "0", "--pooling", "mean"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn export_dot_with_and_without_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = tgfd(&["simulate", "--per-class", "2", "--quiet", "--out", path(&data)]);
    assert!(o.status.success());
    let ds = Dataset::load_dir(&data).unwrap();
    let cascade = ds.windows.iter().find(|w| w.label() == 2).unwrap();

    let with = dir.path().join("with");
    let o = tgfd(&["export-dot", "--data", path(&data), "--id", cascade.id(), "--quiet", "--out", path(&with)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dot = std::fs::read_to_string(with.join(format!("{}.dot", cascade.id()))).unwrap();
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("color=red"));

    let plain = dir.path().join("plain");
    let o = tgfd(&[
        "export-dot", "--data", path(&data), "--id", cascade.id(), "--no-truth", "--quiet", "--out", path(&plain),
    ]);
    assert!(o.status.success());
    let dot = std::fs::read_to_string(plain.join(format!("{}.dot", cascade.id()))).unwrap();
    assert!(!dot.contains("red"));
    assert_eq!(dot.matches("[label=").count(), 12);

    let o = tgfd(&["export-dot", "--data", path(&data), "--id", "missing", "--out", path(&plain)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ingest_writes_dataset_and_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("spans.csv"),
        "ts,svc,trace,span,parent\n0,web,t0,a,\n10,api,t0,b,a\n1000,web,t1,a,\n1010,api,t1,b,a\n2000,web,t2,a,\n",
    )
    .unwrap();
    std::fs::write(d.join("metrics.csv"), "ts,svc,name,value\n0,web,cpu,1\n1000,api,cpu,3\n2000,web,cpu,2\n").unwrap();
    std::fs::write(
        d.join("map.json"),
        r#"{"timestamp_format":"unix_ms",
            "spans":{"timestamp":"ts","service":"svc","trace_id":"trace","span_id":"span","parent_span_id":"parent"},
            "metrics":{"timestamp":"ts","service":"svc","metric":"name","value":"value"},
            "class_names":["NORMAL","FAULT"],"channels":["cpu","span_count"]}"#,
    )
    .unwrap();
    let (map, spans, metrics) = (d.join("map.json"), d.join("spans.csv"), d.join("metrics.csv"));
    let run = |out: &Path, extra: &[&str]| {
        let mut args = vec![
            "ingest", "--column-map", path(&map), "--spans", path(&spans), "--metrics", path(&metrics),
            "--bin-width-ms", "1000", "--window-len", "2", "--stride", "1", "--quiet", "--out", path(out),
        ];
        args.extend_from_slice(extra);
        tgfd(&args)
    };
    let first = d.join("first");
    let o = run(&first, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ds = Dataset::load_dir(&first).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.windows[0].edges(0), &[(0, 1)]);

    let second = d.join("second");
    let stats = first.join("norm_stats.json");
    assert!(run(&second, &["--norm-stats", path(&stats)]).status.success());
    assert_eq!(
        std::fs::read(first.join("windows.jsonl")).unwrap(),
        std::fs::read(second.join("windows.jsonl")).unwrap()
    );
}
