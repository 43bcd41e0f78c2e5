//! The temporal graph model: shared-parameter GRU encoding of each service's
//! feature sequence, per-step attention message passing from callers into
//! callees, fusion of the two, node-then-time readout, and a softmax
//! classifier trained with cross-entropy.
//!
//! Every function here is pure in `(window, params)`.

mod forward;
mod params;

pub use forward::ATTENTION_SLOPE;
pub use params::{init_bound, ModelDims, ModelParams, ParamId, Pooling};

use forward::{ModelVars, Recorded};

use crate::diff::{grad_check, GradCheck, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graphseq::{Adjacency, GraphWindow};

/// Attention outputs for one step, indexed by receiving node.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAttention {
    /// Callers of each node, ascending.
    pub neighbors: Vec<Vec<usize>>,
    /// Raw relevance score per caller, aligned with `neighbors`.
    pub scores: Vec<Vec<f64>>,
    /// Normalized weights per caller; empty rows for nodes without callers.
    pub alpha: Vec<Vec<f64>>,
    /// Aggregated message per node, `N×d_h`.
    pub message: Matrix,
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// Projected inputs per step, `N×d_h`.
    pub u: Vec<Matrix>,
    /// GRU states per step, `N×d_h`.
    pub h: Vec<Matrix>,
    pub attention: Vec<StepAttention>,
    /// Fused states per step, `N×d_h`.
    pub z: Vec<Matrix>,
    /// Node-pooled summaries, `T×d_h`.
    pub g_t: Matrix,
    pub g: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub loss: f64,
}

fn extract_attention(tape: &Tape, step: &forward::StepRecord) -> StepAttention {
    let n = step.neighbors.len();
    let mut scores = vec![Vec::new(); n];
    let mut alpha = vec![Vec::new(); n];
    if let Some(s) = step.scores {
        let flat = tape.value(s).data();
        let mut offset = 0;
        for (i, nbrs) in step.neighbors.iter().enumerate() {
            scores[i] = flat[offset..offset + nbrs.len()].to_vec();
            offset += nbrs.len();
            if let Some(a) = step.alphas[i] {
                alpha[i] = tape.value(a).data().to_vec();
            }
        }
    }
    StepAttention {
        neighbors: step.neighbors.clone(),
        scores,
        alpha,
        message: tape.value(step.message).clone(),
    }
}

fn extract(tape: &Tape, rec: &Recorded) -> ForwardCache {
    let values = |vars: &[Var]| vars.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
    let g_t_rows = values(&rec.g_t);
    let dh = tape.value(rec.g).cols();
    let g_t = Matrix::from_vec(
        g_t_rows.len(),
        dh,
        g_t_rows.into_iter().flat_map(Matrix::into_data).collect(),
    )
    .expect("readout rows");
    ForwardCache {
        u: values(&rec.u),
        h: values(&rec.h),
        attention: rec.steps.iter().map(|s| extract_attention(tape, s)).collect(),
        z: values(&rec.z),
        g_t,
        g: tape.value(rec.g).data().to_vec(),
        y_hat: tape.value(rec.y_hat).data().to_vec(),
        loss: tape.value(rec.loss).data()[0],
    }
}

/// Runs the full model on one window.
pub fn forward(window: &GraphWindow, params: &ModelParams) -> Result<ForwardCache> {
    let mut tape = Tape::new();
    let mv = ModelVars::record(&mut tape, params, false)?;
    let rec = forward::record_window(&mut tape, &mv, window)?;
    Ok(extract(&tape, &rec))
}

/// Forward pass plus the loss gradient for every tensor, in [`ParamId::ALL`] order.
pub fn loss_and_grad(window: &GraphWindow, params: &ModelParams) -> Result<(ForwardCache, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let mv = ModelVars::record(&mut tape, params, true)?;
    let rec = forward::record_window(&mut tape, &mv, window)?;
    let mut grads = tape.backward(rec.loss)?;
    let param_grads = mv.raw.iter().map(|&v| grads.take(v)).collect();
    Ok((extract(&tape, &rec), param_grads))
}

/// Class distribution for one window.
pub fn predict(window: &GraphWindow, params: &ModelParams) -> Result<Vec<f64>> {
    forward(window, params).map(|c| c.y_hat)
}

/// Hidden states `h_{i,t}` for every step (`N×d_h` each), with the projected
/// inputs `u_{i,t}` alongside.
pub fn temporal_encode(window: &GraphWindow, params: &ModelParams) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let mv = ModelVars::record(&mut tape, params, false)?;
    let (u, h) = forward::record_temporal(&mut tape, &mv, window)?;
    let values = |vars: Vec<Var>| vars.into_iter().map(|v| tape.value(v).clone()).collect();
    Ok((values(u), values(h)))
}

/// Attention weights and messages for one step given its hidden states.
pub fn message_pass(h: &Matrix, adj: &Adjacency, params: &ModelParams) -> Result<StepAttention> {
    let mut tape = Tape::new();
    let mv = ModelVars::record(&mut tape, params, false)?;
    let hv = tape.constant(h.clone());
    let step = forward::record_attention(&mut tape, &mv, hv, adj)?;
    Ok(extract_attention(&tape, &step))
}

/// Fused state for a single node.
pub fn fuse(h: &[f64], m: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let dh = params.dims().hidden_dim;
    if h.len() != dh || m.len() != dh {
        return Err(Error::shape(
            "fuse",
            format!("expected vectors of length {dh}, got {} and {}", h.len(), m.len()),
        ));
    }
    let mut tape = Tape::new();
    let mv = ModelVars::record(&mut tape, params, false)?;
    let hv = tape.constant(Matrix::row(h));
    let mv_row = tape.constant(Matrix::row(m));
    let z = forward::record_fuse(&mut tape, &mv, hv, mv_row)?;
    Ok(tape.value(z).data().to_vec())
}

/// Dual readout over fused states (`N×d_h` per step): `(g_t as T×d_h, g)`.
pub fn readout(z: &[Matrix], params: &ModelParams) -> Result<(Matrix, Vec<f64>)> {
    let dh = params.dims().hidden_dim;
    if z.iter().any(|zt| zt.cols() != dh) {
        return Err(Error::shape("readout", "state width does not match hidden_dim"));
    }
    let mut tape = Tape::new();
    let mv = ModelVars::record(&mut tape, params, false)?;
    let zs: Vec<Var> = z.iter().map(|zt| tape.constant(zt.clone())).collect();
    let (g_t, g) = forward::record_readout(&mut tape, &mv, &zs)?;
    let rows: Vec<f64> = g_t.iter().flat_map(|&v| tape.value(v).data().to_vec()).collect();
    Ok((
        Matrix::from_vec(g_t.len(), dh, rows)?,
        tape.value(g).data().to_vec(),
    ))
}

/// `(ŷ, L)` for a global representation and its label.
pub fn classify_and_loss(g: &[f64], label: usize, params: &ModelParams) -> Result<(Vec<f64>, f64)> {
    if g.len() != params.dims().hidden_dim {
        return Err(Error::shape("classify", "representation width does not match hidden_dim"));
    }
    let mut tape = Tape::new();
    let mv = ModelVars::record(&mut tape, params, false)?;
    let gv = tape.constant(Matrix::row(g));
    let (y_hat, loss) = forward::record_classifier(&mut tape, &mv, gv, label)?;
    Ok((tape.value(y_hat).data().to_vec(), tape.value(loss).data()[0]))
}

/// Finite-difference check of the full loss gradient over every parameter entry.
pub fn check_gradients(window: &GraphWindow, params: &ModelParams, step: f64) -> Result<GradCheck> {
    let dims = params.dims();
    grad_check(
        |tape, vars| {
            let mv = ModelVars::from_vars(tape, vars.to_vec(), dims)?;
            Ok(forward::record_window(tape, &mv, window)?.loss)
        },
        params.tensors(),
        step,
    )
}

#[cfg(test)]
mod tests;
