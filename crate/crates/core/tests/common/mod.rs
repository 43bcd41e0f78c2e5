//! Brute-force reference implementations shared by the integration tests.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub truth: Vec<usize>,
    pub pred: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
    pub num_classes: usize,
}

/// Labels, independent predictions and coarse score rows (many ties) that
/// sum to one.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_classes = rng.gen_range(2..=5);
    let n = rng.gen_range(1..=40);
    let truth = (0..n).map(|_| rng.gen_range(0..num_classes)).collect();
    let pred = (0..n).map(|_| rng.gen_range(0..num_classes)).collect();
    let scores = (0..n)
        .map(|_| {
            let mut w: Vec<f64> = (0..num_classes).map(|_| rng.gen_range(0..4) as f64).collect();
            if w.iter().all(|&v| v == 0.0) {
                w[0] = 1.0;
            }
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        })
        .collect();
    Case {
        truth,
        pred,
        scores,
        num_classes,
    }
}

pub fn naive_confusion(truth: &[usize], pred: &[usize], c: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; c]; c];
    for a in 0..c {
        for b in 0..c {
            for k in 0..truth.len() {
                if truth[k] == a && pred[k] == b {
                    m[a][b] += 1;
                }
            }
        }
    }
    m
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub struct NaivePrf {
    pub per_class: Vec<(f64, f64, f64)>,
    pub macro_avg: (f64, f64, f64),
    pub micro: (f64, f64, f64),
    pub weighted: (f64, f64, f64),
}

/// Counts TP/FP/FN per class straight from the samples.
pub fn naive_prf(truth: &[usize], pred: &[usize], c: usize) -> NaivePrf {
    let mut tp = vec![0.0; c];
    let mut fp = vec![0.0; c];
    let mut fn_ = vec![0.0; c];
    for k in 0..truth.len() {
        for class in 0..c {
            match (truth[k] == class, pred[k] == class) {
                (true, true) => tp[class] += 1.0,
                (false, true) => fp[class] += 1.0,
                (true, false) => fn_[class] += 1.0,
                (false, false) => {}
            }
        }
    }
    let per_class: Vec<(f64, f64, f64)> = (0..c)
        .map(|k| {
            let p = safe_div(tp[k], tp[k] + fp[k]);
            let r = safe_div(tp[k], tp[k] + fn_[k]);
            (p, r, f1_of(p, r))
        })
        .collect();
    let mut macro_avg = (0.0, 0.0, 0.0);
    for &(p, r, f) in &per_class {
        macro_avg.0 += p / c as f64;
        macro_avg.1 += r / c as f64;
        macro_avg.2 += f / c as f64;
    }
    let (stp, sfp, sfn): (f64, f64, f64) = (tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    let mp = safe_div(stp, stp + sfp);
    let mr = safe_div(stp, stp + sfn);
    let n = truth.len() as f64;
    let mut weighted = (0.0, 0.0, 0.0);
    for (k, &(p, r, f)) in per_class.iter().enumerate() {
        let support = tp[k] + fn_[k];
        weighted.0 += safe_div(support * p, n);
        weighted.1 += safe_div(support * r, n);
        weighted.2 += safe_div(support * f, n);
    }
    NaivePrf {
        per_class,
        macro_avg,
        micro: (mp, mr, f1_of(mp, mr)),
        weighted,
    }
}

/// The R_K statistic evaluated as the literal triple sum.
pub fn naive_mcc(m: &[Vec<u64>]) -> f64 {
    let c = m.len();
    let x = |a: usize, b: usize| m[a][b] as f64;
    let mut num = 0.0;
    for k in 0..c {
        for l in 0..c {
            for n in 0..c {
                num += x(k, k) * x(l, n) - x(k, l) * x(n, k);
            }
        }
    }
    let mut rows = 0.0;
    let mut cols = 0.0;
    for k in 0..c {
        let mut row_k = 0.0;
        let mut col_k = 0.0;
        let mut row_rest = 0.0;
        let mut col_rest = 0.0;
        for l in 0..c {
            row_k += x(k, l);
            col_k += x(l, k);
        }
        for k2 in 0..c {
            if k2 == k {
                continue;
            }
            for l in 0..c {
                row_rest += x(k2, l);
                col_rest += x(l, k2);
            }
        }
        rows += row_k * row_rest;
        cols += col_k * col_rest;
    }
    let den = rows.sqrt() * cols.sqrt();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Fraction of positive/negative pairs ranked correctly, ties counting half.
pub fn pairwise_auc(truth: &[usize], scores: &[Vec<f64>], class: usize) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..truth.len() {
        if truth[i] != class {
            continue;
        }
        for j in 0..truth.len() {
            if truth[j] == class {
                continue;
            }
            pairs += 1.0;
            let (a, b) = (scores[i][class], scores[j][class]);
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Every disagreement between the library metrics and the brute-force
/// versions on one case, at tolerance 1e-12.
pub fn oracle_mismatches(case: &Case) -> Vec<String> {
    use tgfd::metrics::{auc_ovr, confusion, mcc, prf1, Averaging};

    let Case {
        truth,
        pred,
        scores,
        num_classes: c,
    } = case;
    let c = *c;
    let mut bad = Vec::new();
    let m = confusion(truth, pred, c).unwrap();
    if m.rows() != naive_confusion(truth, pred, c) {
        bad.push("confusion".to_string());
    }
    let naive = naive_prf(truth, pred, c);
    let tol = 1e-12;
    for (avg, want) in [
        (Averaging::Macro, naive.macro_avg),
        (Averaging::Micro, naive.micro),
        (Averaging::Weighted, naive.weighted),
    ] {
        let got = prf1(&m, avg);
        if !(close(got.precision, want.0, tol) && close(got.recall, want.1, tol) && close(got.f1, want.2, tol)) {
            bad.push(format!("{avg:?}: got ({}, {}, {}) want {want:?}", got.precision, got.recall, got.f1));
        }
        for (k, s) in got.per_class.iter().enumerate() {
            let w = naive.per_class[k];
            if !(close(s.precision, w.0, tol) && close(s.recall, w.1, tol) && close(s.f1, w.2, tol)) {
                bad.push(format!("class {k} scores"));
            }
        }
    }
    let micro = prf1(&m, Averaging::Micro);
    if micro.f1 != m.accuracy() {
        bad.push(format!("micro-F1 {} != accuracy {}", micro.f1, m.accuracy()));
    }
    let want_mcc = naive_mcc(&m.rows());
    if !close(mcc(&m), want_mcc, tol) {
        bad.push(format!("mcc {} vs {want_mcc}", mcc(&m)));
    }
    let auc = auc_ovr(truth, scores, c).unwrap();
    let mut defined = Vec::new();
    for k in 0..c {
        let want = pairwise_auc(truth, scores, k);
        let got = auc.per_class[k];
        let ok = match (got, want) {
            (Some(g), Some(w)) => close(g, w, tol),
            (None, None) => true,
            _ => false,
        };
        if !ok {
            bad.push(format!("auc class {k}: {got:?} vs {want:?}"));
        }
        defined.extend(want);
    }
    let want_macro = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    match (auc.macro_auc, want_macro) {
        (Some(g), Some(w)) if close(g, w, tol) => {}
        (None, None) => {}
        (g, w) => bad.push(format!("macro auc {g:?} vs {w:?}")),
    }
    bad
}
