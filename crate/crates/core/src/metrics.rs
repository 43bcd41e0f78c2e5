//! Multiclass classification metrics computed from a confusion matrix and
//! per-class probability scores.
//!
//! Conventions: rows of the confusion matrix are true classes and columns are
//! predictions; any 0/0 per-class score is 0; multiclass MCC is the R_K
//! statistic; AUC is one-vs-rest with midrank ties, averaged over classes that
//! have both positives and negatives.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    n: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn zeros(num_classes: usize) -> Self {
        Confusion {
            n: num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::validation("confusion matrix", "rows must form a square matrix"));
        }
        Ok(Confusion {
            n,
            counts: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Number of samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.n).map(|p| self.get(c, p)).sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.n).map(|t| self.get(t, c)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|c| self.get(c, c)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.trace() as f64, self.total() as f64)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p == r {
        return p;
    }
    ratio(2.0 * p * r, p + r)
}

pub fn confusion(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<Confusion> {
    if truth.len() != pred.len() {
        return Err(Error::validation(
            "labels",
            format!("{} true labels but {} predictions", truth.len(), pred.len()),
        ));
    }
    let mut m = Confusion::zeros(num_classes);
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::validation(
                "labels",
                format!("label pair ({t}, {p}) out of range for {num_classes} classes"),
            ));
        }
        m.counts[t * num_classes + p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    Macro,
    Micro,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassScores>,
}

pub fn per_class_scores(m: &Confusion) -> Vec<ClassScores> {
    (0..m.n)
        .map(|c| {
            let tp = m.get(c, c) as f64;
            let precision = ratio(tp, m.predicted(c) as f64);
            let recall = ratio(tp, m.support(c) as f64);
            ClassScores {
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: m.support(c),
            }
        })
        .collect()
}

pub fn prf1(m: &Confusion, averaging: Averaging) -> Prf {
    let per_class = per_class_scores(m);
    let (precision, recall, f1) = match averaging {
        Averaging::Macro => {
            let k = m.n as f64;
            let mean = |f: fn(&ClassScores) -> f64| ratio(per_class.iter().map(f).sum(), k);
            (mean(|s| s.precision), mean(|s| s.recall), mean(|s| s.f1))
        }
        Averaging::Micro => {
            // Single-label: pooled FP and pooled FN both equal total - trace.
            let tp = m.trace() as f64;
            let precision = ratio(tp, (0..m.n).map(|c| m.predicted(c)).sum::<u64>() as f64);
            let recall = ratio(tp, (0..m.n).map(|c| m.support(c)).sum::<u64>() as f64);
            (precision, recall, harmonic(precision, recall))
        }
        Averaging::Weighted => {
            let total = m.total() as f64;
            let weighted = |f: fn(&ClassScores) -> f64| {
                ratio(per_class.iter().map(|s| s.support as f64 * f(s)).sum(), total)
            };
            (weighted(|s| s.precision), weighted(|s| s.recall), weighted(|s| s.f1))
        }
    };
    Prf {
        precision,
        recall,
        f1,
        per_class,
    }
}

/// Multiclass Matthews correlation (R_K); zero when either marginal is degenerate.
pub fn mcc(m: &Confusion) -> f64 {
    let s = m.total() as f64;
    let c = m.trace() as f64;
    let mut pt = 0.0;
    let mut pp = 0.0;
    let mut tt = 0.0;
    for k in 0..m.n {
        let t = m.support(k) as f64;
        let p = m.predicted(k) as f64;
        pt += p * t;
        pp += p * p;
        tt += t * t;
    }
    let den = ((s * s - pp) * (s * s - tt)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (c * s - pt) / den
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucReport {
    /// Macro mean over classes with a defined AUC; `None` if no class has one.
    pub macro_auc: Option<f64>,
    /// `None` for classes that are absent from the truth or cover all of it.
    pub per_class: Vec<Option<f64>>,
}

impl AucReport {
    pub fn is_undefined(&self) -> bool {
        self.macro_auc.is_none()
    }
}

/// Mann–Whitney AUC of `scores` for the samples flagged positive.
fn rank_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share their mean.
        let midrank = (start + 1 + end) as f64 / 2.0;
        let tied_pos = order[start..end].iter().filter(|&&i| positive[i]).count();
        rank_sum += midrank * tied_pos as f64;
        start = end;
    }
    let n_pos_f = n_pos as f64;
    Some((rank_sum - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// One-vs-rest AUC per class from an `N×C` score table.
pub fn auc_ovr(truth: &[usize], scores: &[Vec<f64>], num_classes: usize) -> Result<AucReport> {
    if truth.len() != scores.len() {
        return Err(Error::validation(
            "scores",
            format!("{} labels but {} score rows", truth.len(), scores.len()),
        ));
    }
    if let Some(row) = scores.iter().position(|r| r.len() != num_classes) {
        return Err(Error::validation(
            "scores",
            format!("row {row} does not have {num_classes} columns"),
        ));
    }
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|c| {
            let column: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let positive: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            rank_auc(&column, &positive)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(AucReport { macro_auc, per_class })
}

/// Lowest index among the maxima.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `null` when the class is absent from the truth (or is all of it).
    pub auc: Option<f64>,
    pub support: u64,
    /// This class's row of the confusion matrix (counts by predicted class).
    pub confusion_row: Vec<u64>,
}

/// The eight headline metrics plus a per-class breakdown. Precision and
/// recall are macro averages, `f1` is support-weighted, and `auc_roc` is the
/// macro one-vs-rest AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc_roc: Option<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub mcc: f64,
    pub per_class: Vec<ClassReport>,
}

impl MetricReport {
    /// Builds the report from true labels and per-sample class distributions.
    pub fn from_scores(
        truth: &[usize],
        scores: &[Vec<f64>],
        num_classes: usize,
        class_names: Option<&[String]>,
    ) -> Result<Self> {
        for (i, row) in scores.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::validation("scores", format!("row {i} sums to {sum}, not 1")));
            }
        }
        let pred: Vec<usize> = scores.iter().map(|r| argmax(r)).collect();
        let m = confusion(truth, &pred, num_classes)?;
        let auc = auc_ovr(truth, scores, num_classes)?;
        Ok(MetricReport::assemble(&m, &auc, class_names))
    }

    pub fn assemble(m: &Confusion, auc: &AucReport, class_names: Option<&[String]>) -> Self {
        let macro_avg = prf1(m, Averaging::Macro);
        let micro = prf1(m, Averaging::Micro);
        let weighted = prf1(m, Averaging::Weighted);
        let rows = m.rows();
        let per_class = macro_avg
            .per_class
            .iter()
            .enumerate()
            .map(|(c, s)| ClassReport {
                class: c,
                name: class_names.and_then(|names| names.get(c).cloned()),
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                auc: auc.per_class.get(c).copied().flatten(),
                support: s.support,
                confusion_row: rows[c].clone(),
            })
            .collect();
        MetricReport {
            accuracy: m.accuracy(),
            precision: macro_avg.precision,
            recall: macro_avg.recall,
            f1: weighted.f1,
            auc_roc: auc.macro_auc,
            macro_f1: macro_avg.f1,
            micro_f1: micro.f1,
            mcc: mcc(m),
            per_class,
        }
    }

    pub fn confusion(&self) -> Confusion {
        let rows: Vec<Vec<u64>> = self.per_class.iter().map(|c| c.confusion_row.clone()).collect();
        Confusion::from_rows(&rows).expect("square by construction")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text table: headline metrics in the usual column order, then
    /// per-class rows and all three precision/recall/F1 averagings.
    pub fn to_table(&self) -> String {
        let fmt = |v: f64| format!("{v:.4}");
        let auc = self.auc_roc.map_or_else(|| "n/a".to_string(), fmt);
        let mut out = String::new();
        let headers = ["Accuracy", "Precision", "Recall", "F1", "AUC-ROC", "Macro-F1", "Micro-F1", "MCC"];
        let values = [
            fmt(self.accuracy),
            fmt(self.precision),
            fmt(self.recall),
            fmt(self.f1),
            auc,
            fmt(self.macro_f1),
            fmt(self.micro_f1),
            fmt(self.mcc),
        ];
        let _ = writeln!(out, "{}", headers.map(|h| format!("{h:>10}")).join(""));
        let _ = writeln!(out, "{}", values.map(|v| format!("{v:>10}")).join(""));
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<16}{:>10}{:>10}{:>10}{:>10}{:>10}", "class", "precision", "recall", "f1", "auc", "support");
        for c in &self.per_class {
            let name = c.name.clone().unwrap_or_else(|| c.class.to_string());
            let auc = c.auc.map_or_else(|| "n/a".to_string(), fmt);
            let _ = writeln!(
                out,
                "{name:<16}{:>10}{:>10}{:>10}{auc:>10}{:>10}",
                fmt(c.precision),
                fmt(c.recall),
                fmt(c.f1),
                c.support
            );
        }
        let _ = writeln!(out);
        let m = self.confusion();
        for (label, avg) in [("macro", Averaging::Macro), ("micro", Averaging::Micro), ("weighted", Averaging::Weighted)] {
            let p = prf1(&m, avg);
            let _ = writeln!(
                out,
                "{label:<16}{:>10}{:>10}{:>10}",
                fmt(p.precision),
                fmt(p.recall),
                fmt(p.f1)
            );
        }
        out
    }
}
