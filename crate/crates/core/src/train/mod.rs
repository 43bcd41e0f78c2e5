//! Supervised training with Adam, a stratified validation split, early
//! stopping on validation loss, checkpoints and evaluation.
//!
//! Everything is seeded from [`TrainConfig::seed`]: the split, the per-epoch
//! shuffle and the parameter initialization. Batch gradients are summed in
//! window order on a single thread, so a run is bit-reproducible.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, EpochRecord, FORMAT_VERSION};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::Matrix;
use crate::error::{Error, Result};
use crate::graphseq::{Dataset, GraphWindow};
use crate::metrics::MetricReport;
use crate::model::{self, ModelDims, ModelParams, ParamId, Pooling};

const STREAM_SPLIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub pooling: Pooling,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a new best validation loss; 0 never stops early.
    pub patience: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub gradient_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dim: 16,
            pooling: Pooling::Mean,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            validation_fraction: 0.1,
            gradient_clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("training: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail("validation_fraction must lie in (0, 1)");
        }
        if let Some(c) = self.gradient_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return fail("gradient_clip_norm must be positive");
            }
        }
        if self.hidden_dim == 0 {
            return fail("hidden_dim must be at least 1");
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(Matrix::sum_squares).sum::<f64>().sqrt()
}

/// One bias-corrected Adam update, after optional global-norm clipping.
/// `names` labels the tensors in error messages.
pub fn adam_step(
    params: &mut [Matrix],
    grads: &[Matrix],
    names: &[&str],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adam", "parameter, gradient and state counts differ"));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = names.get(i).copied().unwrap_or("?");
        if p.shape() != g.shape() {
            return Err(Error::shape("adam", format!("gradient for {name} has the wrong shape")));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient of {name}"),
            });
        }
    }
    let scale = match config.gradient_clip_norm {
        Some(max) => {
            let norm = global_norm(grads);
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, theta) in p.data_mut().iter_mut().enumerate() {
            let gk = g[k] * scale;
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *theta -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

fn param_names() -> Vec<&'static str> {
    ParamId::ALL.iter().map(|id| id.name()).collect()
}

/// Stratified split: per label, a seeded shuffle sends
/// `round(fraction · count)` windows to validation, always leaving at least
/// one for training. Both lists are ascending.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SPLIT);
    let num_labels = labels.iter().max().map_or(0, |&m| m + 1);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..num_labels {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let n_val = ((fraction * members.len() as f64).round() as usize).min(members.len().saturating_sub(1));
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn dims_for(dataset: &Dataset, config: &TrainConfig) -> Result<ModelDims> {
    let dims = ModelDims {
        feat_dim: dataset.feat_dim()?,
        hidden_dim: config.hidden_dim,
        num_classes: dataset.manifest.num_classes,
        pooling: config.pooling,
    };
    dims.validate()?;
    Ok(dims)
}

pub fn mean_loss(windows: &[&GraphWindow], params: &ModelParams) -> Result<f64> {
    let mut total = 0.0;
    for w in windows {
        total += model::forward(w, params)?.loss;
    }
    Ok(total / windows.len() as f64)
}

/// Trains from a fresh initialization and returns the checkpoint with the
/// lowest validation loss (training loss when the split leaves no validation
/// windows) together with the full per-epoch history.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<Checkpoint> {
    train_with_progress(dataset, config, |_| {})
}

pub fn train_with_progress(
    dataset: &Dataset,
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::validation("dataset", "no windows to train on"));
    }
    let dims = dims_for(dataset, config)?;
    let mut params = ModelParams::init(dims, config.seed)?;
    let labels: Vec<usize> = dataset.windows.iter().map(GraphWindow::label).collect();
    let (train_idx, val_idx) = stratified_split(&labels, config.validation_fraction, config.seed);
    let val_windows: Vec<&GraphWindow> = val_idx.iter().map(|&i| &dataset.windows[i]).collect();

    let names = param_names();
    let mut state = AdamState::new(params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_SHUFFLE);

    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0, params.clone());
    let mut stale = 0;
    let mut order = train_idx.clone();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut sum: Option<Vec<Matrix>> = None;
            for &i in batch {
                let (cache, grads) = model::loss_and_grad(&dataset.windows[i], &params)?;
                loss_sum += cache.loss;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            let inv = 1.0 / batch.len() as f64;
            let avg: Vec<Matrix> = sum
                .expect("batches are non-empty")
                .into_iter()
                .map(|g| g.map(|x| x * inv))
                .collect();
            adam_step(params.tensors_mut(), &avg, &names, &mut state, config)?;
        }
        let train_loss = loss_sum / order.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("training loss at epoch {epoch}"),
            });
        }
        let val_loss = if val_windows.is_empty() {
            None
        } else {
            Some(mean_loss(&val_windows, &params)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        progress(&record);
        history.push(record);
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best.0 {
            best = (monitored, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                break;
            }
        }
    }
    let (_, epoch, params) = best;
    Ok(Checkpoint {
        params,
        config: config.clone(),
        epoch,
        history,
    })
}

fn check_compatible(params: &ModelParams, dataset: &Dataset) -> Result<()> {
    let dims = params.dims();
    if dims.num_classes != dataset.manifest.num_classes {
        return Err(Error::validation(
            "checkpoint",
            format!(
                "model has {} classes but the dataset declares {}",
                dims.num_classes, dataset.manifest.num_classes
            ),
        ));
    }
    if let Some(w) = dataset.windows.iter().find(|w| w.feat_dim() != dims.feat_dim) {
        return Err(Error::validation(
            "checkpoint",
            format!(
                "model expects {} features per node but window {} has {}",
                dims.feat_dim,
                w.id(),
                w.feat_dim()
            ),
        ));
    }
    Ok(())
}

/// Class distributions for every window, in dataset order.
pub fn predict_all(params: &ModelParams, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    check_compatible(params, dataset)?;
    dataset.windows.iter().map(|w| model::predict(w, params)).collect()
}

pub fn evaluate(params: &ModelParams, dataset: &Dataset) -> Result<MetricReport> {
    let scores = predict_all(params, dataset)?;
    let truth: Vec<usize> = dataset.windows.iter().map(GraphWindow::label).collect();
    MetricReport::from_scores(
        &truth,
        &scores,
        dataset.manifest.num_classes,
        Some(&dataset.manifest.class_names),
    )
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, val);
    }
    out
}

pub fn save_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}
