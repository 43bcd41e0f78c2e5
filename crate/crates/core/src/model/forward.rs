//! Forward pass recorded on a tape.
//!
//! Node states at one step are stored as an `N×d_h` matrix, one row per
//! service, so every per-node map in the model becomes a single matrix
//! product against a transposed weight. Bias vectors are spread over rows
//! with a `ones(N×1) · bᵀ` product.

use super::params::{ModelDims, ModelParams, ParamId, Pooling};
use crate::diff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graphseq::{Adjacency, GraphWindow};

/// Negative slope of the rectifier inside the attention score.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// Parameter handles on one tape, with transposed and row-shaped views
/// recorded once per pass.
pub(crate) struct ModelVars {
    pub dims: ModelDims,
    pub raw: Vec<Var>,
    input_w: Var,
    input_b: Var,
    update_w: Var,
    update_u: Var,
    update_b: Var,
    reset_w: Var,
    reset_u: Var,
    reset_b: Var,
    cand_w: Var,
    cand_u: Var,
    cand_b: Var,
    attn_a: Var,
    query_w: Var,
    key_w: Var,
    attn_b: Var,
    value_w: Var,
    fuse_w: Var,
    fuse_b: Var,
    pool_q: Var,
    class_w: Var,
    class_b: Var,
}

impl ModelVars {
    /// Records `params` as leaves (`differentiable`) or constants.
    pub fn record(tape: &mut Tape, params: &ModelParams, differentiable: bool) -> Result<Self> {
        let raw: Vec<Var> = params
            .tensors()
            .iter()
            .map(|t| {
                if differentiable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        ModelVars::from_vars(tape, raw, params.dims())
    }

    pub fn from_vars(tape: &mut Tape, raw: Vec<Var>, dims: ModelDims) -> Result<Self> {
        if raw.len() != ParamId::ALL.len() {
            return Err(Error::shape("model", "wrong number of parameter handles"));
        }
        for id in ParamId::ALL {
            if tape.value(raw[id.index()]).shape() != id.shape(&dims) {
                return Err(Error::shape("model", format!("{} has the wrong shape", id.name())));
            }
        }
        let mut t = |id: ParamId| tape.transpose(raw[id.index()]);
        Ok(ModelVars {
            dims,
            input_w: t(ParamId::InputWeight)?,
            input_b: t(ParamId::InputBias)?,
            update_w: t(ParamId::UpdateInput)?,
            update_u: t(ParamId::UpdateRecurrent)?,
            update_b: t(ParamId::UpdateBias)?,
            reset_w: t(ParamId::ResetInput)?,
            reset_u: t(ParamId::ResetRecurrent)?,
            reset_b: t(ParamId::ResetBias)?,
            cand_w: t(ParamId::CandidateInput)?,
            cand_u: t(ParamId::CandidateRecurrent)?,
            cand_b: t(ParamId::CandidateBias)?,
            query_w: t(ParamId::AttnQuery)?,
            key_w: t(ParamId::AttnKey)?,
            attn_b: t(ParamId::AttnBias)?,
            value_w: t(ParamId::ValueWeight)?,
            fuse_w: t(ParamId::FuseWeight)?,
            fuse_b: t(ParamId::FuseBias)?,
            class_w: t(ParamId::ClassWeight)?,
            class_b: t(ParamId::ClassBias)?,
            attn_a: raw[ParamId::AttnVector.index()],
            pool_q: raw[ParamId::PoolQuery.index()],
            raw,
        })
    }
}

/// Per-step attention bookkeeping: which rows of the score vector belong to
/// which receiving node.
pub(crate) struct StepRecord {
    pub neighbors: Vec<Vec<usize>>,
    pub scores: Option<Var>,
    /// One softmax output per node with a non-empty neighborhood.
    pub alphas: Vec<Option<Var>>,
    pub message: Var,
}

pub(crate) struct Recorded {
    pub u: Vec<Var>,
    pub h: Vec<Var>,
    pub steps: Vec<StepRecord>,
    pub z: Vec<Var>,
    pub g_t: Vec<Var>,
    pub g: Var,
    pub y_hat: Var,
    pub loss: Var,
}

fn ones(tape: &mut Tape, rows: usize, cols: usize) -> Var {
    tape.constant(Matrix::filled(rows, cols, 1.0))
}

/// `x · Wᵀ + 1·bᵀ`
fn affine(tape: &mut Tape, x: Var, w_t: Var, b_row: Var, ones_col: Var) -> Result<Var> {
    let xw = tape.matmul(x, w_t)?;
    let b = tape.matmul(ones_col, b_row)?;
    tape.add(xw, b)
}

pub(crate) fn check_window(window: &GraphWindow, dims: &ModelDims) -> Result<()> {
    if window.feat_dim() != dims.feat_dim {
        return Err(Error::shape(
            "temporal_encode",
            format!(
                "window {:?} has feat_dim {} but the model expects {}",
                window.id(),
                window.feat_dim(),
                dims.feat_dim
            ),
        ));
    }
    Ok(())
}

/// Input projection for every step, then one shared GRU over time per node.
pub(crate) fn record_temporal(tape: &mut Tape, mv: &ModelVars, window: &GraphWindow) -> Result<(Vec<Var>, Vec<Var>)> {
    check_window(window, &mv.dims)?;
    let (n, dx, dh) = (window.num_nodes(), window.feat_dim(), mv.dims.hidden_dim);
    let ones_col = ones(tape, n, 1);
    let ones_nd = ones(tape, n, dh);
    let mut h_prev = tape.constant(Matrix::zeros(n, dh));
    let mut us = Vec::with_capacity(window.num_steps());
    let mut hs = Vec::with_capacity(window.num_steps());
    for t in 0..window.num_steps() {
        let x = tape.constant(Matrix::from_vec(n, dx, window.step_features(t).to_vec())?);
        let u = affine(tape, x, mv.input_w, mv.input_b, ones_col)?;
        let h = record_gru(tape, mv, u, h_prev, ones_col, ones_nd)?;
        us.push(u);
        hs.push(h);
        h_prev = h;
    }
    Ok((us, hs))
}

/// `h = (1 − z) ⊙ h_prev + z ⊙ tanh(W_n u + U_n (r ⊙ h_prev) + b_n)`
fn record_gru(tape: &mut Tape, mv: &ModelVars, u: Var, h_prev: Var, ones_col: Var, ones_nd: Var) -> Result<Var> {
    let gate = |tape: &mut Tape, w: Var, r: Var, b: Var| -> Result<Var> {
        let from_input = affine(tape, u, w, b, ones_col)?;
        let from_state = tape.matmul(h_prev, r)?;
        let pre = tape.add(from_input, from_state)?;
        tape.sigmoid(pre)
    };
    let update = gate(tape, mv.update_w, mv.update_u, mv.update_b)?;
    let reset = gate(tape, mv.reset_w, mv.reset_u, mv.reset_b)?;

    let gated = tape.mul(reset, h_prev)?;
    let from_input = affine(tape, u, mv.cand_w, mv.cand_b, ones_col)?;
    let from_state = tape.matmul(gated, mv.cand_u)?;
    let pre = tape.add(from_input, from_state)?;
    let candidate = tape.tanh(pre)?;

    let neg_update = tape.scale(update, -1.0)?;
    let keep = tape.add(ones_nd, neg_update)?;
    let kept = tape.mul(keep, h_prev)?;
    let fresh = tape.mul(update, candidate)?;
    tape.add(kept, fresh)
}

/// Attention-weighted aggregation of caller states into each callee.
pub(crate) fn record_attention(tape: &mut Tape, mv: &ModelVars, h: Var, adj: &Adjacency) -> Result<StepRecord> {
    let n = adj.len();
    let dh = mv.dims.hidden_dim;
    if tape.value(h).shape() != (n, dh) {
        return Err(Error::shape(
            "message_pass",
            format!("hidden states {:?} do not match {n} nodes", tape.value(h).shape()),
        ));
    }
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| adj.neighborhood(i)).collect();
    let num_edges: usize = neighbors.iter().map(Vec::len).sum();
    if num_edges == 0 {
        return Ok(StepRecord {
            neighbors,
            scores: None,
            alphas: vec![None; n],
            message: tape.constant(Matrix::zeros(n, dh)),
        });
    }

    // Edge e runs from caller src[e] into receiver dst[e], grouped by receiver.
    let mut to_receiver = Matrix::zeros(num_edges, n);
    let mut to_sender = Matrix::zeros(num_edges, n);
    let mut e = 0;
    for (i, nbrs) in neighbors.iter().enumerate() {
        for &j in nbrs {
            to_receiver.set(e, i, 1.0);
            to_sender.set(e, j, 1.0);
            e += 1;
        }
    }
    let scatter = tape.constant(to_receiver.transpose());
    let to_receiver = tape.constant(to_receiver);
    let to_sender = tape.constant(to_sender);
    let ones_col = ones(tape, n, 1);

    let query = tape.matmul(h, mv.query_w)?;
    let key_raw = tape.matmul(h, mv.key_w)?;
    let bias = tape.matmul(ones_col, mv.attn_b)?;
    let key = tape.add(key_raw, bias)?;
    let value = tape.matmul(h, mv.value_w)?;

    let q_edges = tape.matmul(to_receiver, query)?;
    let k_edges = tape.matmul(to_sender, key)?;
    let pre = tape.add(q_edges, k_edges)?;
    let act = tape.leaky_relu(pre, ATTENTION_SLOPE)?;
    let scores = tape.matvec(act, mv.attn_a)?;

    // The softmax only sees score differences within a neighborhood, so it is
    // fed each score minus that of the receiver's first edge. Where an edge
    // and the reference share a rectifier regime, their difference in that
    // coordinate is `slope · (k_j − k_ref)`, which no longer involves the
    // query or the bias; those terms then cancel exactly instead of up to
    // rounding.
    let mut reference = Matrix::zeros(num_edges, num_edges);
    let mut first = 0;
    for nbrs in neighbors.iter().filter(|n| !n.is_empty()) {
        for r in 0..nbrs.len() {
            reference.set(first + r, first, 1.0);
        }
        first += nbrs.len();
    }
    let pre_v = tape.value(pre).clone();
    let pre_ref = reference.matmul(&pre_v);
    let mut shared = Matrix::zeros(num_edges, dh);
    let mut split = Matrix::zeros(num_edges, dh);
    for e in 0..num_edges {
        for c in 0..dh {
            let (x, y) = (pre_v.get(e, c), pre_ref.get(e, c));
            if (x > 0.0) == (y > 0.0) {
                shared.set(e, c, if x > 0.0 { 1.0 } else { ATTENTION_SLOPE });
            } else {
                split.set(e, c, 1.0);
            }
        }
    }
    let reference = tape.constant(reference);
    let shared = tape.constant(shared);
    let split = tape.constant(split);
    let kr_edges = tape.matmul(to_sender, key_raw)?;
    let kr_ref = tape.matmul(reference, kr_edges)?;
    let kr_ref = tape.scale(kr_ref, -1.0)?;
    let kr_diff = tape.add(kr_edges, kr_ref)?;
    let linear_part = tape.mul(shared, kr_diff)?;
    let act_ref = tape.matmul(reference, act)?;
    let act_ref = tape.scale(act_ref, -1.0)?;
    let act_diff = tape.add(act, act_ref)?;
    let kinked_part = tape.mul(split, act_diff)?;
    let rel = tape.add(linear_part, kinked_part)?;
    let rel_scores = tape.matvec(rel, mv.attn_a)?;

    let mut alphas = vec![None; n];
    let mut stacked = Vec::new();
    let mut offset = 0;
    for (i, nbrs) in neighbors.iter().enumerate() {
        if nbrs.is_empty() {
            continue;
        }
        let mut select = Matrix::zeros(nbrs.len(), num_edges);
        for r in 0..nbrs.len() {
            select.set(r, offset + r, 1.0);
        }
        let select = tape.constant(select);
        let own = tape.matmul(select, rel_scores)?;
        let alpha = tape.softmax(own)?;
        alphas[i] = Some(alpha);
        stacked.push(alpha);
        offset += nbrs.len();
    }
    let alpha_edges = tape.concat_rows(&stacked)?;
    let ones_row = ones(tape, 1, dh);
    let alpha_wide = tape.matmul(alpha_edges, ones_row)?;
    let sender_values = tape.matmul(to_sender, value)?;
    let weighted = tape.mul(alpha_wide, sender_values)?;
    let message = tape.matmul(scatter, weighted)?;

    Ok(StepRecord {
        neighbors,
        scores: Some(scores),
        alphas,
        message,
    })
}

/// `z = tanh(W_s [h ∥ m] + b_s)` for every row.
pub(crate) fn record_fuse(tape: &mut Tape, mv: &ModelVars, h: Var, m: Var) -> Result<Var> {
    let rows = tape.value(h).rows();
    let ones_col = ones(tape, rows, 1);
    let joined = tape.concat(&[h, m])?;
    let pre = affine(tape, joined, mv.fuse_w, mv.fuse_b, ones_col)?;
    tape.tanh(pre)
}

/// Pools the rows of `x` (`k×d_h`) into one `1×d_h` row.
fn record_pool(tape: &mut Tape, mv: &ModelVars, x: Var) -> Result<Var> {
    let k = tape.value(x).rows();
    if k == 0 {
        return Err(Error::shape("readout", "cannot pool an empty set"));
    }
    let weights_row = match mv.dims.pooling {
        Pooling::Mean => tape.constant(Matrix::filled(1, k, 1.0 / k as f64)),
        Pooling::Attention => {
            let scores = tape.matvec(x, mv.pool_q)?;
            let weights = tape.softmax(scores)?;
            tape.transpose(weights)?
        }
    };
    tape.matmul(weights_row, x)
}

/// Node pooling per step, then temporal pooling of the step summaries.
pub(crate) fn record_readout(tape: &mut Tape, mv: &ModelVars, z: &[Var]) -> Result<(Vec<Var>, Var)> {
    if z.is_empty() {
        return Err(Error::shape("readout", "no time steps"));
    }
    let g_t = z
        .iter()
        .map(|&zt| record_pool(tape, mv, zt))
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat_rows(&g_t)?;
    let g = record_pool(tape, mv, stacked)?;
    Ok((g_t, g))
}

/// Softmax class distribution and the cross-entropy of the true label.
pub(crate) fn record_classifier(tape: &mut Tape, mv: &ModelVars, g: Var, label: usize) -> Result<(Var, Var)> {
    let c = mv.dims.num_classes;
    if label >= c {
        return Err(Error::validation(
            "classifier",
            format!("label {label} out of range for {c} classes"),
        ));
    }
    let logits_w = tape.matmul(g, mv.class_w)?;
    let logits = tape.add(logits_w, mv.class_b)?;
    let y_hat = tape.softmax(logits)?;
    let log_p = tape.log(y_hat)?;
    let mut one_hot = Matrix::zeros(c, 1);
    one_hot.set(label, 0, 1.0);
    let one_hot = tape.constant(one_hot);
    let picked = tape.matmul(log_p, one_hot)?;
    let loss = tape.scale(picked, -1.0)?;
    Ok((y_hat, loss))
}

pub(crate) fn record_window(tape: &mut Tape, mv: &ModelVars, window: &GraphWindow) -> Result<Recorded> {
    let (u, h) = record_temporal(tape, mv, window)?;
    let mut steps = Vec::with_capacity(h.len());
    let mut z = Vec::with_capacity(h.len());
    for (t, &ht) in h.iter().enumerate() {
        let step = record_attention(tape, mv, ht, &window.adjacency(t))?;
        z.push(record_fuse(tape, mv, ht, step.message)?);
        steps.push(step);
    }
    let (g_t, g) = record_readout(tape, mv, &z)?;
    let (y_hat, loss) = record_classifier(tape, mv, g, window.label())?;
    Ok(Recorded {
        u,
        h,
        steps,
        z,
        g_t,
        g,
        y_hat,
        loss,
    })
}
