//! `tgfd` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 numerical failure.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tgfd::diff::GradCheck;
use tgfd::graphseq::{load_windows, random_window, Dataset, WINDOWS_FILE};
use tgfd::ingest::{self, ColumnMap, IngestConfig, IngestInputs, NormStats};
use tgfd::model::{self, ModelDims, ModelParams, Pooling};
use tgfd::sim::{self, ScenarioConfig, TopologyConfig, GROUND_TRUTH_FILE};
use tgfd::train::{self, TrainConfig};
use tgfd::Error;

const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Parser)]
#[command(name = "tgfd", version, about = "Temporal graph fault discrimination for microservice call graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset with ground-truth sidecars.
    Simulate(SimulateArgs),
    /// Convert span, metric, log and injection tables into a dataset.
    Ingest(IngestArgs),
    /// Train a model and write a checkpoint plus loss history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on a random window.
    Gradcheck(GradcheckArgs),
    /// Render one window's call graph (and optional fault propagation) as DOT.
    ExportDot(ExportDotArgs),
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long, default_value_t = 12)]
    services: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    branching: usize,
    #[arg(long, default_value_t = sim::DEFAULT_EDGE_KEEP_PROB)]
    edge_keep_prob: f64,
    /// Use one topology for every window.
    #[arg(long)]
    shared_topology: bool,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long, default_value_t = 6)]
    feat_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    #[arg(long, default_value_t = 0.05)]
    walk_std: f64,
    #[arg(long, default_value_t = 2)]
    onset: usize,
    #[arg(long, default_value_t = 2)]
    onset_jitter: usize,
    #[arg(long, default_value_t = 1.0)]
    magnitude: f64,
    #[arg(long, default_value_t = 0.3)]
    magnitude_spread: f64,
    #[arg(long, default_value_t = 1)]
    delay: usize,
    #[arg(long, default_value_t = 0.7)]
    attenuation: f64,
    #[arg(long, default_value_t = 2)]
    min_common_roots: usize,
    #[arg(long, default_value_t = 3)]
    max_common_roots: usize,
    /// Windows per class.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    per_class: u64,
}

#[derive(Debug, Args, Serialize)]
struct IngestArgs {
    /// JSON column map naming columns, timestamp format, classes and channels.
    #[arg(long)]
    column_map: PathBuf,
    #[arg(long)]
    spans: PathBuf,
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    logs: Option<PathBuf>,
    #[arg(long)]
    injections: Option<PathBuf>,
    #[arg(long, default_value_t = 60_000)]
    bin_width_ms: i64,
    #[arg(long, default_value_t = 8)]
    window_len: usize,
    #[arg(long, default_value_t = 4)]
    stride: usize,
    /// Leading share of windows used to fit normalization statistics.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Re-apply previously written normalization statistics instead of fitting.
    #[arg(long)]
    norm_stats: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Dataset directory with windows.jsonl and manifest.json.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 16)]
    hidden_dim: usize,
    #[arg(long, default_value = "mean")]
    pooling: Pooling,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
    #[arg(long)]
    no_clip: bool,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum PoolingChoice {
    Mean,
    Attention,
    Both,
}

#[derive(Debug, Args, Serialize)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 6)]
    nodes: usize,
    #[arg(long, default_value_t = 4)]
    steps: usize,
    #[arg(long, default_value_t = 5)]
    feat_dim: usize,
    #[arg(long, default_value_t = 8)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 0.3)]
    edge_prob: f64,
    #[arg(long, value_enum, default_value_t = PoolingChoice::Both)]
    pooling: PoolingChoice,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
}

#[derive(Debug, Args, Serialize)]
struct ExportDotArgs {
    /// Dataset directory, or a windows JSONL file.
    #[arg(long)]
    data: PathBuf,
    /// Window id; defaults to the first window.
    #[arg(long)]
    id: Option<String>,
    /// Ground-truth sidecar; defaults to the dataset's own if present.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Ignore any ground truth and draw the plain call graph.
    #[arg(long)]
    no_truth: bool,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 1,
            Error::NonFinite { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

#[derive(Debug, Serialize)]
struct RunManifest<'a, C: Serialize> {
    subcommand: &'a str,
    config: &'a C,
    seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    tool_version: &'a str,
    duration_secs: f64,
}

struct Run<'a> {
    name: &'a str,
    seed: u64,
    out: Option<&'a Path>,
    quiet: bool,
    started: Instant,
}

impl Run<'_> {
    fn out_dir(&self) -> CmdResult<&Path> {
        let dir = self
            .out
            .ok_or_else(|| Failure::usage(format!("{} requires --out <DIR>", self.name)))?;
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        Ok(dir)
    }

    fn say(&self, text: &str) {
        // Write errors such as a closed pipe are ignored.
        if !self.quiet {
            let _ = writeln!(std::io::stdout(), "{text}");
        }
    }

    fn finish<C: Serialize>(&self, config: &C, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> CmdResult {
        let Some(dir) = self.out else {
            return Ok(());
        };
        let manifest = RunManifest {
            subcommand: self.name,
            config,
            seed: self.seed,
            inputs,
            outputs,
            tool_version: env!("CARGO_PKG_VERSION"),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("run manifest serializes");
        text.push('\n');
        write_file(&dir.join(RUN_MANIFEST_FILE), text.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    std::fs::write(path, bytes).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn simulate(run: &Run, args: &SimulateArgs) -> CmdResult {
    let dir = run.out_dir()?;
    let topology = TopologyConfig {
        num_services: args.services,
        num_layers: args.layers,
        branching: args.branching,
        edge_keep_prob: args.edge_keep_prob,
        shared: args.shared_topology,
    };
    let scenario = ScenarioConfig {
        num_steps: args.steps,
        feat_dim: args.feat_dim,
        noise_std: args.noise_std,
        walk_std: args.walk_std,
        fault_onset_step: args.onset,
        onset_jitter: args.onset_jitter,
        fault_magnitude: args.magnitude,
        magnitude_spread: args.magnitude_spread,
        propagation_delay_steps: args.delay,
        propagation_attenuation: args.attenuation,
        common_cause_min_roots: args.min_common_roots,
        common_cause_max_roots: args.max_common_roots,
    };
    let simulated = sim::gen_dataset(&topology, &scenario, args.per_class as usize, run.seed)?;
    simulated.dataset.save_dir(dir)?;
    sim::save_ground_truth(&simulated.truth, &dir.join(GROUND_TRUTH_FILE))?;
    run.say(&format!(
        "wrote {} windows ({} classes) to {}",
        simulated.dataset.len(),
        simulated.dataset.manifest.num_classes,
        dir.display()
    ));
    run.finish(
        args,
        vec![],
        vec![dir.join(WINDOWS_FILE), dir.join("manifest.json"), dir.join(GROUND_TRUTH_FILE)],
    )
}

fn run_ingest(run: &Run, args: &IngestArgs) -> CmdResult {
    let dir = run.out_dir()?;
    let map = ColumnMap::load(&args.column_map)?;
    let stats = args.norm_stats.as_deref().map(NormStats::load).transpose()?;
    let inputs = IngestInputs {
        spans: args.spans.clone(),
        metrics: args.metrics.clone(),
        logs: args.logs.clone(),
        injections: args.injections.clone(),
    };
    let config = IngestConfig {
        bin_width_ms: args.bin_width_ms,
        window_len: args.window_len,
        stride: args.stride,
        train_fraction: args.train_fraction,
    };
    let out = ingest::ingest(&inputs, &map, &config, stats.as_ref())?;
    out.dataset.save_dir(dir)?;
    let stats_path = dir.join("norm_stats.json");
    out.norm_stats.save(&stats_path)?;
    let report_path = dir.join("ingest_report.json");
    let mut report = serde_json::to_string_pretty(&out.report).expect("report serializes");
    report.push('\n');
    write_file(&report_path, report.as_bytes())?;
    for (id, reason) in &out.report.dropped_windows {
        log::warn!("dropped window {id}: {reason}");
    }
    run.say(&format!(
        "wrote {} windows over {} services ({} bins) to {}",
        out.dataset.len(),
        out.report.num_services,
        out.report.num_bins,
        dir.display()
    ));
    let mut input_paths = vec![args.column_map.clone(), args.spans.clone(), args.metrics.clone()];
    input_paths.extend(args.logs.iter().chain(&args.injections).chain(&args.norm_stats).cloned());
    run.finish(
        args,
        input_paths,
        vec![dir.join(WINDOWS_FILE), dir.join("manifest.json"), stats_path, report_path],
    )
}

fn run_train(run: &Run, args: &TrainArgs) -> CmdResult {
    let dir = run.out_dir()?;
    let dataset = Dataset::load_dir(&args.data)?;
    let config = TrainConfig {
        hidden_dim: args.hidden_dim,
        pooling: args.pooling,
        learning_rate: args.lr,
        beta1: args.beta1,
        beta2: args.beta2,
        epsilon: args.epsilon,
        batch_size: args.batch_size,
        max_epochs: args.epochs,
        patience: args.patience,
        seed: run.seed,
        validation_fraction: args.val_fraction,
        gradient_clip_norm: (!args.no_clip).then_some(args.clip_norm),
    };
    let ckpt = train::train_with_progress(&dataset, &config, |r| {
        let val = r.val_loss.map_or_else(|| "-".to_string(), |v| format!("{v:.5}"));
        log::info!("epoch {:>3}  train {:.5}  val {val}", r.epoch, r.train_loss);
    })?;
    let ckpt_path = dir.join("model.ckpt");
    let history_path = dir.join("history.csv");
    train::save_checkpoint(&ckpt, &ckpt_path)?;
    train::save_history(&ckpt.history, &history_path)?;
    run.say(&format!(
        "kept epoch {} of {}; checkpoint at {}",
        ckpt.epoch,
        ckpt.history.len(),
        ckpt_path.display()
    ));
    run.finish(&config, vec![args.data.clone()], vec![ckpt_path, history_path])
}

fn run_eval(run: &Run, args: &EvalArgs) -> CmdResult {
    let dir = run.out_dir()?;
    let ckpt = train::load_checkpoint(&args.checkpoint)?;
    let dataset = Dataset::load_dir(&args.data)?;
    let report = train::evaluate(&ckpt.params, &dataset)?;
    let json_path = dir.join("report.json");
    let text_path = dir.join("report.txt");
    write_file(&json_path, report.to_json().as_bytes())?;
    let table = report.to_table();
    write_file(&text_path, table.as_bytes())?;
    run.say(table.trim_end());
    run.finish(args, vec![args.checkpoint.clone(), args.data.clone()], vec![json_path, text_path])
}

fn run_gradcheck(run: &Run, args: &GradcheckArgs) -> CmdResult {
    if !(args.step > 0.0) {
        return Err(Failure::usage("--step must be positive"));
    }
    if !(0.0..=1.0).contains(&args.edge_prob) {
        return Err(Failure::usage("--edge-prob must lie in [0, 1]"));
    }
    let poolings = match args.pooling {
        PoolingChoice::Mean => vec![Pooling::Mean],
        PoolingChoice::Attention => vec![Pooling::Attention],
        PoolingChoice::Both => vec![Pooling::Mean, Pooling::Attention],
    };
    if args.nodes == 0 || args.steps == 0 || args.feat_dim == 0 || args.classes < 2 {
        return Err(Failure::usage("nodes, steps and feat-dim must be positive and classes at least 2"));
    }
    let window = random_window(run.seed, args.nodes, args.steps, args.feat_dim, args.classes, args.edge_prob);
    let mut worst = 0.0_f64;
    for pooling in poolings {
        let dims = ModelDims {
            feat_dim: args.feat_dim,
            hidden_dim: args.hidden_dim,
            num_classes: args.classes,
            pooling,
        };
        let params = ModelParams::init(dims, run.seed)?;
        let check: GradCheck = model::check_gradients(&window, &params, args.step)?;
        run.say(&format!(
            "{pooling:<9} max relative error {:.3e} over {} entries",
            check.max_rel_error, check.entries_checked
        ));
        worst = worst.max(check.max_rel_error);
    }
    let passed = worst <= args.threshold;
    run.say(&format!(
        "{} (max {worst:.3e}, threshold {:.1e})",
        if passed { "PASS" } else { "FAIL" },
        args.threshold
    ));
    if run.out.is_some() {
        run.out_dir()?;
    }
    run.finish(args, vec![], vec![])?;
    if passed {
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            message: format!("gradient check failed: {worst:.3e} > {:.1e}", args.threshold),
        })
    }
}

fn run_export_dot(run: &Run, args: &ExportDotArgs) -> CmdResult {
    let dir = run.out_dir()?;
    let (windows_path, default_truth) = if args.data.is_dir() {
        (args.data.join(WINDOWS_FILE), Some(args.data.join(GROUND_TRUTH_FILE)))
    } else {
        (args.data.clone(), None)
    };
    let windows = load_windows(&windows_path)?;
    let window = match &args.id {
        Some(id) => windows
            .iter()
            .find(|w| w.id() == id)
            .ok_or_else(|| Error::Validation {
                subject: "export-dot".into(),
                message: format!("no window with id {id}"),
            })?,
        None => windows.first().ok_or_else(|| Error::Validation {
            subject: "export-dot".into(),
            message: "dataset has no windows".into(),
        })?,
    };
    let truth_path = if args.no_truth {
        None
    } else {
        args.truth.clone().or(default_truth.filter(|p| p.exists()))
    };
    let truth = match &truth_path {
        Some(p) => {
            let records = sim::load_ground_truth(p)?;
            Some(records.into_iter().find(|t| t.id == window.id()).ok_or_else(|| Error::Validation {
                subject: "ground truth".into(),
                message: format!("{} has no record for window {}", p.display(), window.id()),
            })?)
        }
        None => None,
    };
    let dot = tgfd::dot::export_dot(window, truth.as_ref())?;
    let path = dir.join(format!("{}.dot", window.id()));
    write_file(&path, dot.as_bytes())?;
    run.say(&format!("wrote {}", path.display()));
    let mut inputs = vec![windows_path];
    inputs.extend(truth_path);
    run.finish(args, inputs, vec![path])
}

fn dispatch(cli: &Cli) -> CmdResult {
    let name = match &cli.command {
        Command::Simulate(_) => "simulate",
        Command::Ingest(_) => "ingest",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Gradcheck(_) => "gradcheck",
        Command::ExportDot(_) => "export-dot",
    };
    let run = Run {
        name,
        seed: cli.seed,
        out: cli.out.as_deref(),
        quiet: cli.quiet,
        started: Instant::now(),
    };
    match &cli.command {
        Command::Simulate(a) => simulate(&run, a),
        Command::Ingest(a) => run_ingest(&run, a),
        Command::Train(a) => run_train(&run, a),
        Command::Eval(a) => run_eval(&run, a),
        Command::Gradcheck(a) => run_gradcheck(&run, a),
        Command::ExportDot(a) => run_export_dot(&run, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
