use super::*;
use crate::graphseq::{build_adjacency, permute_window, random_window};

fn dims(pooling: Pooling) -> ModelDims {
    ModelDims {
        feat_dim: 3,
        hidden_dim: 4,
        num_classes: 3,
        pooling,
    }
}

fn params(pooling: Pooling, seed: u64) -> ModelParams {
    ModelParams::init(dims(pooling), seed).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn zero_params_and_input_keep_state_at_zero() {
    let p = ModelParams::zeros(dims(Pooling::Mean)).unwrap();
    let w = GraphWindow::new("z", 2, 3, 3, vec![0.0; 18], vec![vec![]; 3], 0, None).unwrap();
    let (_, h) = temporal_encode(&w, &p).unwrap();
    assert!(h.iter().all(|ht| ht.data().iter().all(|&x| x == 0.0)));
}

#[test]
fn saturated_update_gate_freezes_state() {
    let mut p = params(Pooling::Mean, 4);
    *p.tensor_mut(ParamId::UpdateBias) = Matrix::filled(4, 1, -20.0);
    let w = random_window(9, 3, 5, 3, 3, 0.3);
    let (_, h) = temporal_encode(&w, &p).unwrap();
    for t in 1..h.len() {
        assert!(close(h[t].data(), h[t - 1].data(), 1e-6), "step {t}");
    }
}

#[test]
fn identical_feature_sequences_give_identical_states() {
    let p = params(Pooling::Mean, 5);
    let row = [0.3, -1.2, 0.8];
    let mut feats = Vec::new();
    for t in 0..4 {
        let shifted: Vec<f64> = row.iter().map(|x| x + t as f64 * 0.1).collect();
        feats.extend_from_slice(&shifted);
        feats.extend_from_slice(&shifted);
    }
    let w = GraphWindow::new("pair", 2, 4, 3, feats, vec![vec![]; 4], 0, None).unwrap();
    let (_, h) = temporal_encode(&w, &p).unwrap();
    for ht in &h {
        assert_eq!(ht.row_slice(0), ht.row_slice(1));
    }
}

#[test]
fn feature_width_mismatch_is_rejected() {
    let p = params(Pooling::Mean, 1);
    let w = random_window(1, 2, 2, 5, 3, 0.5);
    assert!(temporal_encode(&w, &p).is_err());
}

#[test]
fn single_caller_gets_full_weight() {
    let p = params(Pooling::Mean, 6);
    let h = Matrix::from_vec(2, 4, vec![0.1, -0.4, 0.7, 0.2, -0.3, 0.5, 0.05, -0.9]).unwrap();
    let adj = build_adjacency(&[(0, 1)], 2).unwrap();
    let att = message_pass(&h, &adj, &p).unwrap();
    assert_eq!(att.alpha[1], vec![1.0]);
    assert!(att.alpha[0].is_empty());
    let expected = p.tensor(ParamId::ValueWeight).matmul(&Matrix::column(h.row_slice(0)));
    assert!(close(att.message.row_slice(1), expected.data(), 1e-15));
    assert!(att.message.row_slice(0).iter().all(|&x| x == 0.0));
}

#[test]
fn identical_callers_split_weight_evenly() {
    let p = params(Pooling::Mean, 7);
    let row = [0.2, 0.1, -0.6, 0.4];
    let mut data = row.to_vec();
    data.extend_from_slice(&row);
    data.extend_from_slice(&[1.0, -1.0, 0.5, 0.0]);
    let h = Matrix::from_vec(3, 4, data).unwrap();
    let adj = build_adjacency(&[(0, 2), (1, 2)], 3).unwrap();
    let att = message_pass(&h, &adj, &p).unwrap();
    assert_eq!(att.neighbors[2], vec![0, 1]);
    assert!(close(&att.alpha[2], &[0.5, 0.5], 1e-15));
}

#[test]
fn node_without_callers_gets_zero_message() {
    let p = params(Pooling::Mean, 8);
    let h = Matrix::filled(2, 4, 0.3);
    let att = message_pass(&h, &build_adjacency(&[], 2).unwrap(), &p).unwrap();
    assert!(att.message.data().iter().all(|&x| x == 0.0));
    assert!(att.alpha.iter().all(Vec::is_empty));
}

#[test]
fn fuse_cases() {
    let mut p = params(Pooling::Mean, 9);
    let h = [0.5, -2.0, 1.5, 0.0];
    let m = [3.0, 1.0, -4.0, 0.2];
    let z = fuse(&h, &m, &p).unwrap();
    assert!(z.iter().all(|x| x.abs() < 1.0));

    *p.tensor_mut(ParamId::FuseWeight) = Matrix::zeros(4, 8);
    assert!(fuse(&h, &m, &p).unwrap().iter().all(|&x| x == 0.0));

    let mut block = Matrix::zeros(4, 8);
    for i in 0..4 {
        block.set(i, i, 1.0);
    }
    *p.tensor_mut(ParamId::FuseWeight) = block;
    let z = fuse(&h, &m, &p).unwrap();
    let direct: Vec<f64> = h.iter().map(|x| x.tanh()).collect();
    assert!(close(&z, &direct, 1e-15));
}

#[test]
fn readout_of_constant_states_is_that_state() {
    let v = [0.25, -0.5, 0.75, 0.1];
    let z: Vec<Matrix> = (0..3)
        .map(|_| Matrix::from_vec(4, 4, v.repeat(4)).unwrap())
        .collect();
    for pooling in [Pooling::Mean, Pooling::Attention] {
        let (_, g) = readout(&z, &params(pooling, 10)).unwrap();
        assert!(close(&g, &v, 1e-15), "{pooling}");
    }
}

#[test]
fn zero_pool_query_matches_mean_pooling() {
    let z: Vec<Matrix> = (0..3)
        .map(|t| Matrix::from_vec(5, 4, (0..20).map(|k| ((k * 7 + t) % 11) as f64 / 5.0 - 1.0).collect()).unwrap())
        .collect();
    let mean = params(Pooling::Mean, 11);
    let mut attn = mean.clone();
    attn = ModelParams::from_tensors(ModelDims { pooling: Pooling::Attention, ..mean.dims() }, attn.into_tensors()).unwrap();
    *attn.tensor_mut(ParamId::PoolQuery) = Matrix::zeros(4, 1);
    let (gt_mean, g_mean) = readout(&z, &mean).unwrap();
    let (gt_attn, g_attn) = readout(&z, &attn).unwrap();
    assert_eq!(gt_mean, gt_attn);
    assert_eq!(g_mean, g_attn);
}

#[test]
fn mean_readout_ignores_node_order() {
    let p = params(Pooling::Mean, 12);
    let z = vec![Matrix::from_vec(3, 4, (0..12).map(|x| (x as f64).sin()).collect()).unwrap()];
    let mut rows = Vec::new();
    for r in [2, 0, 1] {
        rows.extend_from_slice(z[0].row_slice(r));
    }
    let permuted = vec![Matrix::from_vec(3, 4, rows).unwrap()];
    let (_, a) = readout(&z, &p).unwrap();
    let (_, b) = readout(&permuted, &p).unwrap();
    assert!(close(&a, &b, 1e-15));
}

fn with_logits(num_classes: usize, logits: &[f64]) -> ModelParams {
    let d = ModelDims {
        feat_dim: 2,
        hidden_dim: 3,
        num_classes,
        pooling: Pooling::Mean,
    };
    let mut p = ModelParams::zeros(d).unwrap();
    *p.tensor_mut(ParamId::ClassBias) = Matrix::column(logits);
    p
}

#[test]
fn uniform_logits_give_log_c_loss() {
    let p = with_logits(5, &[0.7; 5]);
    let (y, loss) = classify_and_loss(&[0.1, 0.2, 0.3], 3, &p).unwrap();
    assert!(y.iter().all(|v| (v - 0.2).abs() < 1e-15));
    assert!((loss - 5f64.ln()).abs() < 1e-12);
    assert!((loss - 1.60944).abs() < 1e-5);
}

#[test]
fn saturated_true_class_gives_near_zero_loss() {
    let p = with_logits(3, &[0.0, 40.0, 0.0]);
    let (_, loss) = classify_and_loss(&[0.0; 3], 1, &p).unwrap();
    assert!((0.0..=1e-6).contains(&loss));
}

#[test]
fn hand_computed_softmax_and_loss() {
    let p = with_logits(3, &[1f64.ln(), 2f64.ln(), 7f64.ln()]);
    let (y, loss) = classify_and_loss(&[0.0; 3], 2, &p).unwrap();
    assert!(close(&y, &[0.1, 0.2, 0.7], 1e-15));
    assert!((loss + 0.7f64.ln()).abs() < 1e-14);
    assert!((loss - 0.35667).abs() < 1e-5);
    assert!(classify_and_loss(&[0.0; 3], 3, &p).is_err());
}

#[test]
fn single_node_single_step_reduces_to_fusion_of_state() {
    let p = params(Pooling::Attention, 13);
    let w = GraphWindow::new("one", 1, 1, 3, vec![0.4, -0.1, 0.9], vec![vec![]], 1, None).unwrap();
    let cache = forward(&w, &p).unwrap();
    let expected = fuse(cache.h[0].row_slice(0), &[0.0; 4], &p).unwrap();
    assert!(close(&cache.g, &expected, 1e-15));
}

#[test]
fn duplicated_disconnected_node_keeps_prediction() {
    let p = params(Pooling::Mean, 14);
    let base = random_window(3, 1, 4, 3, 3, 0.0);
    let mut feats = Vec::new();
    for t in 0..4 {
        feats.extend_from_slice(base.feature(t, 0));
        feats.extend_from_slice(base.feature(t, 0));
    }
    let doubled = GraphWindow::new("dup", 2, 4, 3, feats, vec![vec![]; 4], base.label(), None).unwrap();
    let a = forward(&base, &p).unwrap();
    let b = forward(&doubled, &p).unwrap();
    assert!(close(&a.y_hat, &b.y_hat, 1e-15));
}

#[test]
fn cache_invariants_hold() {
    for seed in 0..10 {
        let w = random_window(seed, 5, 3, 3, 3, 0.4);
        for pooling in [Pooling::Mean, Pooling::Attention] {
            let c = forward(&w, &params(pooling, seed)).unwrap();
            for step in &c.attention {
                for row in step.alpha.iter().filter(|r| !r.is_empty()) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                }
            }
            assert!((c.y_hat.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!(c.y_hat.iter().all(|&p| p > 0.0));
            assert!(c.loss >= 0.0);
        }
    }
}

#[test]
fn removing_callers_zeroes_message_but_not_state() {
    let p = params(Pooling::Mean, 15);
    let w = random_window(21, 5, 4, 3, 3, 0.6);
    let target = 2;
    let edges: Vec<Vec<_>> = w
        .all_edges()
        .iter()
        .map(|s| s.iter().copied().filter(|&(_, callee)| callee != target).collect())
        .collect();
    let cut = GraphWindow::new(w.id(), 5, 4, 3, w.features().to_vec(), edges, w.label(), None).unwrap();
    let a = forward(&w, &p).unwrap();
    let b = forward(&cut, &p).unwrap();
    for t in 0..4 {
        assert!(b.attention[t].message.row_slice(target).iter().all(|&x| x == 0.0));
        assert_eq!(a.h[t], b.h[t]);
    }
}

#[test]
fn mean_pooling_loss_is_permutation_invariant() {
    let p = params(Pooling::Mean, 16);
    let w = random_window(5, 6, 3, 3, 3, 0.4);
    let perm = [3, 0, 5, 1, 4, 2];
    let pw = permute_window(&w, &perm).unwrap();
    let a = forward(&w, &p).unwrap();
    let b = forward(&pw, &p).unwrap();
    assert!((a.loss - b.loss).abs() <= 1e-9);
    for t in 0..3 {
        for (i, &pi) in perm.iter().enumerate() {
            assert!(close(a.z[t].row_slice(i), b.z[t].row_slice(pi), 1e-12));
        }
    }
}

#[test]
fn full_gradient_matches_finite_differences() {
    for pooling in [Pooling::Mean, Pooling::Attention] {
        let w = random_window(42, 6, 4, 3, 3, 0.3);
        let report = check_gradients(&w, &params(pooling, 42), 1e-5).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{pooling}: {report:?}");
    }
}

#[test]
fn loss_and_grad_agrees_with_forward() {
    let p = params(Pooling::Attention, 17);
    let w = random_window(8, 4, 3, 3, 3, 0.5);
    let (cache, grads) = loss_and_grad(&w, &p).unwrap();
    assert_eq!(cache, forward(&w, &p).unwrap());
    for (id, g) in ParamId::ALL.iter().zip(&grads) {
        assert_eq!(g.shape(), id.shape(&p.dims()));
    }
}
