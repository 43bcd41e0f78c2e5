//! C interface to the fault classifier.
//!
//! Every function returns a [`TgfdStatus`]. On failure a message is kept per
//! thread and can be read with [`tgfd_last_error`]. Handles are opaque and
//! must be released with their matching `_free` function. Panics never cross
//! the boundary; they surface as [`TgfdStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tgfd::graphseq::{random_window, Dataset};
use tgfd::model::{self, ModelDims, ModelParams, Pooling};
use tgfd::sim::{gen_dataset, ScenarioConfig, TopologyConfig};
use tgfd::train::{self, load_checkpoint, save_checkpoint, Checkpoint, TrainConfig};
use tgfd::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TgfdStatus {
    Ok = 0,
    /// A null pointer, bad UTF-8, an out-of-range index or a rejected option.
    InvalidArgument = 1,
    /// Data that does not satisfy the model's structural requirements.
    Validation = 2,
    /// A computation produced a non-finite value.
    Numerical = 3,
    Io = 4,
    /// A file could not be parsed.
    Format = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TgfdPooling {
    Mean = 0,
    Attention = 1,
}

impl From<TgfdPooling> for Pooling {
    fn from(p: TgfdPooling) -> Self {
        match p {
            TgfdPooling::Mean => Pooling::Mean,
            TgfdPooling::Attention => Pooling::Attention,
        }
    }
}

/// Training options. Start from [`tgfd_train_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TgfdTrainOptions {
    pub hidden_dim: usize,
    pub pooling: TgfdPooling,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Values `<= 0` disable clipping.
    pub clip_norm: f64,
}

/// Headline metrics. `auc_roc` is NaN when no class has both positives and negatives.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TgfdMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc_roc: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub mcc: f64,
}

/// A set of labelled graph windows.
pub struct TgfdDataset(Dataset);

/// Trained parameters together with their training configuration.
pub struct TgfdModel(Checkpoint);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).expect("interior nulls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

struct Failure(TgfdStatus, String);

impl Failure {
    fn argument(message: impl Into<String>) -> Self {
        Failure(TgfdStatus::InvalidArgument, message.into())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Validation { .. } | Error::Shape { .. } => TgfdStatus::Validation,
            Error::NonFinite { .. } => TgfdStatus::Numerical,
            Error::Config(_) => TgfdStatus::InvalidArgument,
            Error::Parse { .. } | Error::Format(_) => TgfdStatus::Format,
            Error::Io { .. } => TgfdStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TgfdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TgfdStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            TgfdStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::argument(format!("{what} is null")));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::argument(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::argument(format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::argument(format!("{what} is null")))
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tgfd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn tgfd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `dir` must be a null-terminated string and `out_dataset` writable.
#[no_mangle]
pub unsafe extern "C" fn tgfd_dataset_load(dir: *const c_char, out_dataset: *mut *mut TgfdDataset) -> TgfdStatus {
    guard(|| {
        let slot = out(out_dataset, "out_dataset")?;
        let dir = path_arg(dir, "dir")?;
        let ds = Dataset::load_dir(&dir)?;
        *slot = Box::into_raw(Box::new(TgfdDataset(ds)));
        Ok(())
    })
}

/// Simulated dataset with `per_class` windows of each fault class, using the
/// default topology and scenario settings.
///
/// # Safety
/// `out_dataset` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tgfd_dataset_simulate(
    per_class: usize,
    seed: u64,
    out_dataset: *mut *mut TgfdDataset,
) -> TgfdStatus {
    guard(|| {
        let slot = out(out_dataset, "out_dataset")?;
        let sim = gen_dataset(&TopologyConfig::default(), &ScenarioConfig::default(), per_class, seed)?;
        *slot = Box::into_raw(Box::new(TgfdDataset(sim.dataset)));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library and `dir` be a null-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tgfd_dataset_save(dataset: *const TgfdDataset, dir: *const c_char) -> TgfdStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        ds.0.save_dir(&path_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library and `out_len` be writable.
#[no_mangle]
pub unsafe extern "C" fn tgfd_dataset_len(dataset: *const TgfdDataset, out_len: *mut usize) -> TgfdStatus {
    guard(|| {
        *out(out_len, "out_len")? = handle(dataset, "dataset")?.0.len();
        Ok(())
    })
}

/// Label of window `index`.
///
/// # Safety
/// `dataset` must come from this library and `out_label` be writable.
#[no_mangle]
pub unsafe extern "C" fn tgfd_dataset_label(
    dataset: *const TgfdDataset,
    index: usize,
    out_label: *mut usize,
) -> TgfdStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        let w = ds
            .windows
            .get(index)
            .ok_or_else(|| Failure::argument(format!("index {index} out of range for {} windows", ds.len())))?;
        *out(out_label, "out_label")? = w.label();
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tgfd_dataset_free(dataset: *mut TgfdDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

#[no_mangle]
pub extern "C" fn tgfd_train_options_default() -> TgfdTrainOptions {
    let c = TrainConfig::default();
    TgfdTrainOptions {
        hidden_dim: c.hidden_dim,
        pooling: match c.pooling {
            Pooling::Mean => TgfdPooling::Mean,
            Pooling::Attention => TgfdPooling::Attention,
        },
        learning_rate: c.learning_rate,
        beta1: c.beta1,
        beta2: c.beta2,
        epsilon: c.epsilon,
        batch_size: c.batch_size,
        max_epochs: c.max_epochs,
        patience: c.patience,
        seed: c.seed,
        validation_fraction: c.validation_fraction,
        clip_norm: c.gradient_clip_norm.unwrap_or(0.0),
    }
}

/// # Safety
/// `dataset` must come from this library, `options` be null or readable, and
/// `out_model` writable. A null `options` means the defaults.
#[no_mangle]
pub unsafe extern "C" fn tgfd_train(
    dataset: *const TgfdDataset,
    options: *const TgfdTrainOptions,
    out_model: *mut *mut TgfdModel,
) -> TgfdStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let ds = handle(dataset, "dataset")?;
        let o = options.as_ref().copied().unwrap_or_else(|| tgfd_train_options_default());
        let config = TrainConfig {
            hidden_dim: o.hidden_dim,
            pooling: o.pooling.into(),
            learning_rate: o.learning_rate,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
            batch_size: o.batch_size,
            max_epochs: o.max_epochs,
            patience: o.patience,
            seed: o.seed,
            validation_fraction: o.validation_fraction,
            gradient_clip_norm: (o.clip_norm > 0.0).then_some(o.clip_norm),
        };
        let ckpt = train::train(&ds.0, &config)?;
        *slot = Box::into_raw(Box::new(TgfdModel(ckpt)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a null-terminated string and `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn tgfd_model_load(path: *const c_char, out_model: *mut *mut TgfdModel) -> TgfdStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let ckpt = load_checkpoint(&path_arg(path, "path")?)?;
        *slot = Box::into_raw(Box::new(TgfdModel(ckpt)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and `path` be a null-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tgfd_model_save(model: *const TgfdModel, path: *const c_char) -> TgfdStatus {
    guard(|| {
        save_checkpoint(&handle(model, "model")?.0, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and `out_classes` be writable.
#[no_mangle]
pub unsafe extern "C" fn tgfd_model_num_classes(model: *const TgfdModel, out_classes: *mut usize) -> TgfdStatus {
    guard(|| {
        *out(out_classes, "out_classes")? = handle(model, "model")?.0.params.dims().num_classes;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tgfd_model_free(model: *mut TgfdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// Handles must come from this library and `out_metrics` be writable.
#[no_mangle]
pub unsafe extern "C" fn tgfd_evaluate(
    model: *const TgfdModel,
    dataset: *const TgfdDataset,
    out_metrics: *mut TgfdMetrics,
) -> TgfdStatus {
    guard(|| {
        let slot = out(out_metrics, "out_metrics")?;
        let r = train::evaluate(&handle(model, "model")?.0.params, &handle(dataset, "dataset")?.0)?;
        *slot = TgfdMetrics {
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            auc_roc: r.auc_roc.unwrap_or(f64::NAN),
            macro_f1: r.macro_f1,
            micro_f1: r.micro_f1,
            mcc: r.mcc,
        };
        Ok(())
    })
}

/// Class distribution for window `index`, written to `out_probs`, which must
/// hold `len` values; `len` must equal the model's class count.
///
/// # Safety
/// Handles must come from this library and `out_probs` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tgfd_predict(
    model: *const TgfdModel,
    dataset: *const TgfdDataset,
    index: usize,
    out_probs: *mut f64,
    len: usize,
) -> TgfdStatus {
    guard(|| {
        let params = &handle(model, "model")?.0.params;
        let ds = &handle(dataset, "dataset")?.0;
        if out_probs.is_null() {
            return Err(Failure::argument("out_probs is null"));
        }
        let classes = params.dims().num_classes;
        if len != classes {
            return Err(Failure::argument(format!("buffer holds {len} values but the model has {classes} classes")));
        }
        let w = ds
            .windows
            .get(index)
            .ok_or_else(|| Failure::argument(format!("index {index} out of range for {} windows", ds.len())))?;
        if w.feat_dim() != params.dims().feat_dim {
            return Err(Failure(
                TgfdStatus::Validation,
                format!("model expects {} features per node but window {} has {}", params.dims().feat_dim, w.id(), w.feat_dim()),
            ));
        }
        let probs = model::predict(w, params)?;
        std::slice::from_raw_parts_mut(out_probs, len).copy_from_slice(&probs);
        Ok(())
    })
}

/// Finite-difference check of every parameter gradient on a random window.
/// Writes the largest relative error.
///
/// # Safety
/// `out_max_rel_error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tgfd_gradcheck(
    seed: u64,
    nodes: usize,
    steps: usize,
    feat_dim: usize,
    hidden_dim: usize,
    classes: usize,
    edge_prob: f64,
    pooling: TgfdPooling,
    step: f64,
    out_max_rel_error: *mut f64,
) -> TgfdStatus {
    guard(|| {
        let slot = out(out_max_rel_error, "out_max_rel_error")?;
        if nodes == 0 || steps == 0 || feat_dim == 0 || classes < 2 {
            return Err(Failure::argument("nodes, steps and feat_dim must be positive and classes at least 2"));
        }
        if !(0.0..=1.0).contains(&edge_prob) || !(step > 0.0) {
            return Err(Failure::argument("edge_prob must lie in [0, 1] and step be positive"));
        }
        let window = random_window(seed, nodes, steps, feat_dim, classes, edge_prob);
        let dims = ModelDims {
            feat_dim,
            hidden_dim,
            num_classes: classes,
            pooling: pooling.into(),
        };
        let params = ModelParams::init(dims, seed)?;
        *slot = model::check_gradients(&window, &params, step)?.max_rel_error;
        Ok(())
    })
}
