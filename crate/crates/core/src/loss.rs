//! Per-example cross-entropy and its weighted aggregate.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::OutputActivation;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// One loss per evaluated node and the residual `p − y` that is the
/// gradient of each loss with respect to that node's logits.
#[derive(Debug, Clone)]
pub struct PerExampleLoss {
    losses: Vec<f64>,
    residuals: DenseMatrix,
}

impl PerExampleLoss {
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    /// `∂lᵢ/∂logitsᵢ` row by row.
    pub fn residuals(&self) -> &DenseMatrix {
        &self.residuals
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct WeightedLoss {
    pub value: f64,
    /// `∂(Σᵢ wᵢlᵢ)/∂logits`, one row per evaluated node.
    pub grad_logits: DenseMatrix,
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<DenseMatrix> {
    let mut m = DenseMatrix::zeros(labels.len(), n_classes);
    for (i, &y) in labels.iter().enumerate() {
        if y >= n_classes {
            return Err(Error::Param(format!("label {y} out of range for {n_classes} classes")));
        }
        m.set(i, y, 1.0);
    }
    Ok(m)
}

fn check_one_hot(targets: &DenseMatrix) -> Result<()> {
    for i in 0..targets.rows() {
        let row = targets.row(i);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Contract(format!("label row {i} is not one-hot: {row:?}")));
        }
    }
    Ok(())
}

/// Sigmoid outputs use per-class binary cross-entropy
/// `−Σ_c [y ln p + (1−y) ln(1−p)]`; softmax outputs use `−Σ_c y ln p`.
/// Either way the logit gradient is `p − y`.
pub fn per_example_ce(
    probs: &DenseMatrix,
    targets: &DenseMatrix,
    output: OutputActivation,
) -> Result<PerExampleLoss> {
    if probs.shape() != targets.shape() {
        return Err(Error::shape("per_example_ce", probs.shape(), targets.shape()));
    }
    check_one_hot(targets)?;
    let clamp = |p: f64| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let losses = (0..probs.rows())
        .map(|i| {
            probs
                .row(i)
                .iter()
                .zip(targets.row(i))
                .map(|(&p, &y)| {
                    let p = clamp(p);
                    match output {
                        OutputActivation::Sigmoid => -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()),
                        OutputActivation::Softmax => -y * p.ln(),
                    }
                })
                .sum::<f64>()
        })
        .collect();
    Ok(PerExampleLoss {
        losses,
        residuals: probs.sub(targets)?,
    })
}

/// `Σᵢ wᵢlᵢ` and its logit gradient `wᵢ(pᵢ − yᵢ)`.
pub fn weighted_loss(losses: &PerExampleLoss, weights: &[f64]) -> Result<WeightedLoss> {
    if weights.len() != losses.len() {
        return Err(Error::shape("weighted_loss", (weights.len(), 1), (losses.len(), 1)));
    }
    if let Some(i) = weights.iter().position(|&w| !(w >= 0.0)) {
        return Err(Error::Contract(format!("weight {i} is negative: {}", weights[i])));
    }
    let value = losses
        .losses
        .iter()
        .zip(weights)
        .fold(0.0, |acc, (l, w)| acc + w * l);
    let mut grad_logits = losses.residuals.clone();
    for (i, &w) in weights.iter().enumerate() {
        for v in grad_logits.row_mut(i) {
            *v *= w;
        }
    }
    Ok(WeightedLoss { value, grad_logits })
}

/// Unweighted mean loss with its logit gradient.
pub fn mean_loss(
    probs: &DenseMatrix,
    targets: &DenseMatrix,
    output: OutputActivation,
) -> Result<WeightedLoss> {
    if probs.rows() == 0 {
        return Err(Error::Param("mean loss over an empty set".into()));
    }
    let per = per_example_ce(probs, targets, output)?;
    let m = per.len();
    weighted_loss(&per, &vec![1.0 / m as f64; m])
}

/// `(1/M) Σⱼ l^meta_j` over the meta examples.
pub fn meta_loss(probs_meta: &DenseMatrix, labels_meta: &DenseMatrix, output: OutputActivation) -> Result<f64> {
    Ok(mean_loss(probs_meta, labels_meta, output)?.value)
}

/// Expands per-row gradients onto a `n_total × C` matrix at `rows`.
pub fn scatter_rows(grad: &DenseMatrix, rows: &[usize], n_total: usize) -> Result<DenseMatrix> {
    if grad.rows() != rows.len() {
        return Err(Error::shape("scatter_rows", grad.shape(), (rows.len(), grad.cols())));
    }
    let mut out = DenseMatrix::zeros(n_total, grad.cols());
    for (k, &r) in rows.iter().enumerate() {
        if r >= n_total {
            return Err(Error::Param(format!("row {r} out of range for {n_total}")));
        }
        for (o, &g) in out.row_mut(r).iter_mut().zip(grad.row(k)) {
            *o += g;
        }
    }
    Ok(out)
}
