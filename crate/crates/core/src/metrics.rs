//! Accuracy, macro-F1 and Mann-Whitney AUC-ROC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub auc_roc: f64,
}

/// Binary problems threshold the positive-class score at 0.5 (strictly
/// above is positive); otherwise argmax with ties to the lower class.
pub fn predict(scores: &DenseMatrix, positive_class: usize) -> Vec<usize> {
    let c = scores.cols();
    (0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            if c == 2 {
                if row[positive_class] > 0.5 {
                    positive_class
                } else {
                    1 - positive_class
                }
            } else {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            }
        })
        .collect()
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Unweighted mean of per-class `2TP / (2TP + FP + FN)`, with an empty
/// denominator counting as 0.
pub fn macro_f1(predicted: &[usize], labels: &[usize], n_classes: usize) -> f64 {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &y) in predicted.iter().zip(labels) {
        if p == y {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let total: f64 = (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                (2 * tp[c]) as f64 / denom as f64
            }
        })
        .sum();
    total / n_classes as f64
}

/// Probability that a random positive outranks a random negative, ties
/// counted as one half, via the rank-sum statistic.
pub fn auc_roc(scores: &[f64], is_positive: &[bool]) -> Result<f64> {
    if scores.len() != is_positive.len() {
        return Err(Error::shape("auc_roc", (scores.len(), 1), (is_positive.len(), 1)));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("score {i} is not finite")));
    }
    let n_pos = is_positive.iter().filter(|&&p| p).count();
    let n_neg = is_positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Param("AUC undefined with a single class present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks over tie groups; doubled to stay integral
    let mut pos_rank_sum_x2 = 0u64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let rank_x2 = (start + 1 + end) as u64;
        for &i in &order[start..end] {
            if is_positive[i] {
                pos_rank_sum_x2 += rank_x2;
            }
        }
        start = end;
    }
    let n_pos = n_pos as u64;
    let u_x2 = pos_rank_sum_x2 - n_pos * (n_pos + 1);
    Ok(u_x2 as f64 / (2 * n_pos * n_neg as u64) as f64)
}

/// Accuracy, macro-F1 and AUC of `positive_class` scores.
pub fn compute_metrics(
    scores: &DenseMatrix,
    labels: &[usize],
    positive_class: usize,
) -> Result<MetricReport> {
    if scores.rows() != labels.len() {
        return Err(Error::shape("compute_metrics", scores.shape(), (labels.len(), 1)));
    }
    let n_classes = scores.cols();
    if positive_class >= n_classes || labels.iter().any(|&y| y >= n_classes) {
        return Err(Error::Param("label or positive class out of range".into()));
    }
    if !scores.is_finite() {
        return Err(Error::Numeric("non-finite scores".into()));
    }
    let predicted = predict(scores, positive_class);
    let pos_scores: Vec<f64> = (0..scores.rows()).map(|i| scores.get(i, positive_class)).collect();
    let is_pos: Vec<bool> = labels.iter().map(|&y| y == positive_class).collect();
    Ok(MetricReport {
        accuracy: accuracy(&predicted, labels),
        macro_f1: macro_f1(&predicted, labels, n_classes),
        auc_roc: auc_roc(&pos_scores, &is_pos)?,
    })
}

/// Binary convenience: `scores` are positive-class probabilities.
pub fn binary_metrics(scores: &[f64], labels: &[usize]) -> Result<MetricReport> {
    let m = DenseMatrix::from_fn(scores.len(), 2, |i, c| if c == 1 { scores[i] } else { 1.0 - scores[i] });
    compute_metrics(&m, labels, 1)
}
