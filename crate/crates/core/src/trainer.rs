//! Full-batch training loops: meta re-weighting, plain, and class-weighted.
//!
//! One meta step at parameters `θ`:
//!
//! 1. per-example training losses `lᵢ(θ)`;
//! 2. the perturbed step `θ̂(γ) = θ − α ∇_θ Σᵢ γᵢ lᵢ(θ)` evaluated at `γ = 0`;
//! 3. `gᵢ = ∂/∂γᵢ L^meta(θ̂(γ)) = −α ⟨∇_θ lᵢ(θ), ∇_θ L^meta(θ)⟩`;
//! 4. proposals `w̃ᵢ = max(0, −η gᵢ)`;
//! 5. `wᵢ = w̃ᵢ / (Σⱼ w̃ⱼ + δ(Σⱼ w̃ⱼ))`;
//! 6. `θ ← θ − α ∇_θ Σᵢ wᵢ lᵢ(θ)` through the configured optimizer.
//!
//! Step 3 does not materialize per-example gradients: one forward-mode pass
//! of the training graph along `∇_θ L^meta` yields every inner product at once.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::loss::{self, mean_loss, one_hot, per_example_ce, scatter_rows, weighted_loss};
use crate::metrics::{compute_metrics, MetricReport};
use crate::model::{self, backward, forward, jvp, GcnParams, OutputActivation, Propagation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Meta,
    Plain,
    ClassWeighted,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "meta" => Ok(Mode::Meta),
            "plain" => Ok(Mode::Plain),
            "class_weighted" => Ok(Mode::ClassWeighted),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    /// Inner learning rate α.
    pub alpha: f64,
    /// Meta learning rate η.
    pub eta: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub mode: Mode,
    pub output: OutputActivation,
    pub hidden: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            eta: 1.0,
            epochs: 300,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            mode: Mode::Meta,
            output: OutputActivation::Sigmoid,
            hidden: model::HIDDEN_UNITS,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("eta", self.eta)?;
        positive("adam_eps", self.adam_eps)?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be at least 1".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(())
    }
}

/// Nodes to train on, with the graph they live in.
#[derive(Debug, Clone, Copy)]
pub struct TrainingTask<'a> {
    pub x: &'a DenseMatrix,
    pub propagation: Propagation<'a>,
    /// Labels of every node; only `train` and `val` entries are read.
    pub labels: &'a [usize],
    pub n_classes: usize,
    pub train: &'a [usize],
    pub val: &'a [usize],
}

/// The meta set with its own (induced) graph; every node is evaluated.
#[derive(Debug, Clone, Copy)]
pub struct MetaTask<'a> {
    pub x: &'a DenseMatrix,
    pub propagation: Propagation<'a>,
    pub labels: &'a [usize],
}

impl TrainingTask<'_> {
    fn check(&self) -> Result<()> {
        let n = self.x.rows();
        if self.labels.len() != n {
            return Err(Error::shape("TrainingTask", (n, 1), (self.labels.len(), 1)));
        }
        if self.train.is_empty() {
            return Err(Error::Param("empty training set".into()));
        }
        if let Some(&i) = self.train.iter().chain(self.val).find(|&&i| i >= n) {
            return Err(Error::Param(format!("node index {i} out of range for {n} nodes")));
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= self.n_classes) {
            return Err(Error::Param(format!("label {y} out of range")));
        }
        Ok(())
    }

    fn train_targets(&self) -> Result<DenseMatrix> {
        let y: Vec<usize> = self.train.iter().map(|&i| self.labels[i]).collect();
        one_hot(&y, self.n_classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    /// Normalized weights.
    pub w: Vec<f64>,
    /// Clamped proposals.
    pub w_tilde: Vec<f64>,
    /// Perturbations; zero at every step.
    pub gamma: Vec<f64>,
}

/// `w̃ᵢ = max(0, −η gᵢ)`.
pub fn propose_weights(meta_grad: &[f64], eta: f64) -> Vec<f64> {
    meta_grad.iter().map(|&g| f64::max(0.0, -eta * g)).collect()
}

/// `wᵢ = w̃ᵢ / (Σ w̃ + δ(Σ w̃))`; all-zero proposals give all-zero weights.
///
/// Weights are formed as differences of the normalized running sum, so the
/// left-to-right sum of a nonzero result is exactly `1.0`.
pub fn normalize_weights(w_tilde: &[f64]) -> Vec<f64> {
    let max = w_tilde.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![0.0; w_tilde.len()];
    }
    // pre-scaling by the max keeps the sum finite for huge proposals
    let scaled: Vec<f64> = w_tilde.iter().map(|&v| v / max).collect();
    let total: f64 = scaled.iter().sum();
    let denom = total + if total == 0.0 { 1.0 } else { 0.0 };
    let (mut prefix, mut prev) = (0.0, 0.0);
    let mut w: Vec<f64> = scaled
        .iter()
        .map(|&v| {
            prefix += v;
            let c = prefix / denom;
            let wi = c - prev;
            prev = c;
            wi
        })
        .collect();
    // a rounding tie in one difference can leave the sum one ulp off
    let k = (0..w.len()).fold(0, |k, i| if w[i] > w[k] { i } else { k });
    for _ in 0..64 {
        let s: f64 = w.iter().sum();
        if s == 1.0 {
            break;
        }
        w[k] = if s < 1.0 { w[k].next_up() } else { w[k].next_down() };
    }
    w
}

/// `∇_θ lᵢ` for each node in `indices`, one backward pass per node.
pub fn per_example_param_gradients(
    params: &GcnParams,
    task: &TrainingTask<'_>,
    indices: &[usize],
    output: OutputActivation,
) -> Result<Vec<GcnParams>> {
    let cache = forward(params, task.propagation, task.x, output)?;
    let y: Vec<usize> = indices.iter().map(|&i| task.labels[i]).collect();
    let per = per_example_ce(
        &cache.probs().select_rows(indices),
        &one_hot(&y, task.n_classes)?,
        output,
    )?;
    let n = task.x.rows();
    indices
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut upstream = DenseMatrix::zeros(n, task.n_classes);
            upstream.row_mut(i).copy_from_slice(per.residuals().row(k));
            backward(&cache, params, task.propagation, &upstream)
        })
        .collect()
}

/// Mean meta loss and its parameter gradient.
pub fn meta_loss_and_grad(
    params: &GcnParams,
    meta: &MetaTask<'_>,
    n_classes: usize,
    output: OutputActivation,
) -> Result<(f64, GcnParams)> {
    if meta.labels.is_empty() {
        return Err(Error::Param("meta set is empty".into()));
    }
    let cache = forward(params, meta.propagation, meta.x, output)?;
    let ml = mean_loss(cache.probs(), &one_hot(meta.labels, n_classes)?, output)?;
    let grad = backward(&cache, params, meta.propagation, &ml.grad_logits)?;
    Ok((ml.value, grad))
}

/// Quantities computed at `θ_t` by one meta step.
#[derive(Debug, Clone)]
pub struct MetaGradient {
    /// `∂L^meta(θ̂(γ))/∂γᵢ` at `γ = 0`, one per training node.
    pub g: Vec<f64>,
    pub train_losses: loss::PerExampleLoss,
    pub meta_loss: f64,
    cache: model::ForwardCache,
}

/// Steps 1–3: losses at `θ_t` and the meta-gradient with respect to `γ`.
pub fn meta_gradient(
    params: &GcnParams,
    task: &TrainingTask<'_>,
    meta: &MetaTask<'_>,
    alpha: f64,
    output: OutputActivation,
) -> Result<MetaGradient> {
    let cache = forward(params, task.propagation, task.x, output)?;
    let train_losses = per_example_ce(
        &cache.probs().select_rows(task.train),
        &task.train_targets()?,
        output,
    )?;
    let (meta_loss, meta_grad) = meta_loss_and_grad(params, meta, task.n_classes, output)?;
    if !meta_grad.is_finite() {
        return Err(Error::Numeric("non-finite meta-loss gradient".into()));
    }
    let tangent = jvp(&cache, params, task.propagation, &meta_grad)?;
    let g = task
        .train
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let dl: f64 = train_losses
                .residuals()
                .row(k)
                .iter()
                .zip(tangent.row(i))
                .map(|(r, t)| r * t)
                .sum();
            -alpha * dl
        })
        .collect();
    Ok(MetaGradient {
        g,
        train_losses,
        meta_loss,
        cache,
    })
}

/// Steps 1–5: the weights a meta step would apply at `θ_t`.
pub fn meta_weights(
    params: &GcnParams,
    task: &TrainingTask<'_>,
    meta: &MetaTask<'_>,
    cfg: &TrainerConfig,
) -> Result<WeightState> {
    let mg = meta_gradient(params, task, meta, cfg.alpha, cfg.output)?;
    Ok(weight_state(&mg.g, cfg.eta))
}

fn weight_state(g: &[f64], eta: f64) -> WeightState {
    let w_tilde = propose_weights(g, eta);
    WeightState {
        w: normalize_weights(&w_tilde),
        gamma: vec![0.0; w_tilde.len()],
        w_tilde,
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: i32,
        m: GcnParams,
        v: GcnParams,
    },
}

impl Optimizer {
    pub fn from_config(cfg: &TrainerConfig, params: &GcnParams) -> Self {
        match cfg.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd { lr: cfg.alpha },
            OptimizerKind::Adam => Optimizer::Adam {
                lr: cfg.alpha,
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: cfg.adam_eps,
                t: 0,
                m: params.zeros_like(),
                v: params.zeros_like(),
            },
        }
    }

    pub fn step(&mut self, params: &mut GcnParams, grads: &GcnParams) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => params.axpy(-*lr, grads),
            Optimizer::Adam { lr, beta1, beta2, eps, t, m, v } => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t);
                let bc2 = 1.0 - beta2.powi(*t);
                for (l, g) in grads.layers().iter().enumerate() {
                    let p = params.layers_mut()[l].data_mut();
                    let ml = m.layers_mut()[l].data_mut();
                    let vl = v.layers_mut()[l].data_mut();
                    for (k, &gk) in g.data().iter().enumerate() {
                        ml[k] = *beta1 * ml[k] + (1.0 - *beta1) * gk;
                        vl[k] = *beta2 * vl[k] + (1.0 - *beta2) * gk * gk;
                        p[k] -= *lr * (ml[k] / bc1) / ((vl[k] / bc2).sqrt() + *eps);
                    }
                }
                Ok(())
            }
        }
    }
}

/// Result of one meta step.
#[derive(Debug, Clone)]
pub struct MetaStep {
    pub weights: WeightState,
    pub train_loss: f64,
    pub meta_loss: f64,
}

/// Steps 1–6. When every weight is zero the parameters are left untouched.
pub fn meta_weight_step(
    params: &mut GcnParams,
    optimizer: &mut Optimizer,
    task: &TrainingTask<'_>,
    meta: &MetaTask<'_>,
    cfg: &TrainerConfig,
) -> Result<MetaStep> {
    let mg = meta_gradient(params, task, meta, cfg.alpha, cfg.output)?;
    let weights = weight_state(&mg.g, cfg.eta);
    apply_weighted_step(params, optimizer, task, &mg.cache, &mg.train_losses, &weights.w)?;
    Ok(MetaStep {
        train_loss: mg.train_losses.mean(),
        meta_loss: mg.meta_loss,
        weights,
    })
}

fn apply_weighted_step(
    params: &mut GcnParams,
    optimizer: &mut Optimizer,
    task: &TrainingTask<'_>,
    cache: &model::ForwardCache,
    losses: &loss::PerExampleLoss,
    w: &[f64],
) -> Result<()> {
    if w.iter().all(|&v| v == 0.0) {
        return Ok(());
    }
    let wl = weighted_loss(losses, w)?;
    let upstream = scatter_rows(&wl.grad_logits, task.train, task.x.rows())?;
    let grads = backward(cache, params, task.propagation, &upstream)?;
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite parameter gradient".into()));
    }
    optimizer.step(params, &grads)?;
    if !params.is_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok(())
}

/// `wᵢ ∝ 1 / freq(yᵢ)` over the training nodes, summing to one.
pub fn class_balanced_weights(train_labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &y in train_labels {
        counts[y] += 1;
    }
    let raw: Vec<f64> = train_labels.iter().map(|&y| 1.0 / counts[y] as f64).collect();
    normalize_weights(&raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Unweighted mean training loss at the start of the epoch.
    pub train_loss: f64,
    /// Meta-set loss at the start of the epoch, NaN without a meta set.
    pub meta_loss: f64,
    /// Validation metrics after the epoch's update.
    pub val: MetricReport,
    pub w_min: f64,
    pub w_mean: f64,
    pub w_max: f64,
    pub class_mean_weight: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

pub const TRAINLOG_HEADER: &str =
    "epoch,train_loss,meta_loss,val_accuracy,val_macro_f1,val_auc,w_min,w_mean,w_max";

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRAINLOG_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                e.meta_loss,
                e.val.accuracy,
                e.val.macro_f1,
                e.val.auc_roc,
                e.w_min,
                e.w_mean,
                e.w_max
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the epoch with the best validation macro-F1.
    pub params: GcnParams,
    pub best_epoch: usize,
    pub log: TrainLog,
}

fn summarize(w: &[f64], labels: &[usize], n_classes: usize) -> (f64, f64, f64, Vec<f64>) {
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let mut sums = vec![0.0; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (&wi, &y) in w.iter().zip(labels) {
        sums[y] += wi;
        counts[y] += 1;
    }
    let per_class = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect();
    (min, mean, max, per_class)
}

/// Glorot-initializes `[F, hidden, C]` from `cfg.seed` and trains.
pub fn train(task: &TrainingTask<'_>, meta: Option<&MetaTask<'_>>, cfg: &TrainerConfig) -> Result<TrainOutcome> {
    let params = GcnParams::init(&[task.x.cols(), cfg.hidden, task.n_classes], cfg.seed)?;
    train_from(params, task, meta, cfg)
}

/// Runs `cfg.epochs` full-batch steps from `params`, keeping the parameters
/// with the best validation macro-F1 (earliest on ties).
pub fn train_from(
    mut params: GcnParams,
    task: &TrainingTask<'_>,
    meta: Option<&MetaTask<'_>>,
    cfg: &TrainerConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    task.check()?;
    if let Some(m) = meta {
        if m.labels.is_empty() {
            return Err(Error::Param("meta set is empty".into()));
        }
        if m.labels.len() != m.x.rows() {
            return Err(Error::shape("MetaTask", m.x.shape(), (m.labels.len(), 1)));
        }
    }
    let meta_required = match (cfg.mode, meta) {
        (Mode::Meta, None) => return Err(Error::Param("meta mode requires a meta set".into())),
        (Mode::Meta, Some(m)) => Some(m),
        _ => None,
    };
    let train_labels: Vec<usize> = task.train.iter().map(|&i| task.labels[i]).collect();
    let targets = task.train_targets()?;
    let val_labels: Vec<usize> = task.val.iter().map(|&i| task.labels[i]).collect();
    let fixed_weights = match cfg.mode {
        Mode::Plain => Some(vec![1.0 / task.train.len() as f64; task.train.len()]),
        Mode::ClassWeighted => Some(class_balanced_weights(&train_labels, task.n_classes)),
        Mode::Meta => None,
    };

    let mut optimizer = Optimizer::from_config(cfg, &params);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, GcnParams)> = None;

    for epoch in 1..=cfg.epochs {
        let (w, train_loss, meta_loss) = match (&fixed_weights, meta_required) {
            (None, Some(m)) => {
                let step = meta_weight_step(&mut params, &mut optimizer, task, m, cfg)
                    .map_err(|e| annotate(e, epoch))?;
                (step.weights.w, step.train_loss, step.meta_loss)
            }
            (Some(w), _) => {
                let cache = forward(&params, task.propagation, task.x, cfg.output)?;
                let losses = per_example_ce(&cache.probs().select_rows(task.train), &targets, cfg.output)?;
                let meta_loss = match meta {
                    Some(m) => {
                        let mc = forward(&params, m.propagation, m.x, cfg.output)?;
                        loss::meta_loss(mc.probs(), &one_hot(m.labels, task.n_classes)?, cfg.output)?
                    }
                    None => f64::NAN,
                };
                apply_weighted_step(&mut params, &mut optimizer, task, &cache, &losses, w)
                    .map_err(|e| annotate(e, epoch))?;
                (w.clone(), losses.mean(), meta_loss)
            }
            (None, None) => unreachable!("meta mode always has a meta set"),
        };

        let val = evaluate(&params, task, task.val, &val_labels, cfg.output)?;
        let (w_min, w_mean, w_max, class_mean_weight) = summarize(&w, &train_labels, task.n_classes);
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            meta_loss,
            val,
            w_min,
            w_mean,
            w_max,
            class_mean_weight,
        });
        if best.as_ref().is_none_or(|(f1, _, _)| val.macro_f1 > *f1) {
            best = Some((val.macro_f1, epoch, params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("epochs >= 1");
    Ok(TrainOutcome {
        params,
        best_epoch,
        log,
    })
}

fn annotate(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

/// Metrics of `params` on `nodes` (positive class 1 for binary tasks).
pub fn evaluate(
    params: &GcnParams,
    task: &TrainingTask<'_>,
    nodes: &[usize],
    labels: &[usize],
    output: OutputActivation,
) -> Result<MetricReport> {
    let cache = forward(params, task.propagation, task.x, output)?;
    compute_metrics(&cache.probs().select_rows(nodes), labels, task.n_classes.min(2) - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphData;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eq5_arithmetic() {
        assert_eq!(normalize_weights(&[1.0, 3.0]), vec![0.25, 0.75]);
        assert_eq!(normalize_weights(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(propose_weights(&[0.5, -2.0, 0.0], 1.0), vec![0.0, 2.0, 0.0]);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(4000))]
        #[test]
        fn normalized_weights_sum_to_exactly_one(
            raw in proptest::collection::vec((0.0f64..1.0, -300i32..300, proptest::bool::weighted(0.3)), 1..300)
        ) {
            let w_tilde: Vec<f64> = raw
                .iter()
                .map(|&(m, e, zero)| if zero { 0.0 } else { m * 10f64.powi(e) })
                .collect();
            let w = normalize_weights(&w_tilde);
            proptest::prop_assert!(w.iter().all(|&v| v >= 0.0));
            let s: f64 = w.iter().sum();
            if w_tilde.iter().all(|&v| v == 0.0) {
                proptest::prop_assert_eq!(s, 0.0);
            } else {
                proptest::prop_assert_eq!(s, 1.0);
            }
            let max = w_tilde.iter().copied().fold(0.0, f64::max);
            let total: f64 = w_tilde.iter().map(|v| v / max.max(f64::MIN_POSITIVE)).sum();
            for (a, b) in w.iter().zip(&w_tilde) {
                if *b == 0.0 {
                    proptest::prop_assert_eq!(*a, 0.0);
                } else {
                    proptest::prop_assert!((a - b / max / total).abs() <= 1e-15);
                }
            }
        }
    }

    #[test]
    fn normalization_scale_invariant() {
        let w = [0.3, 0.0, 1.7, 2.2];
        let scaled: Vec<f64> = w.iter().map(|v| v * 37.5).collect();
        let a = normalize_weights(&w);
        let b = normalize_weights(&scaled);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn class_weights_balanced_equals_uniform() {
        assert_eq!(class_balanced_weights(&[0, 1, 1, 0], 2), vec![0.25; 4]);
        let w = class_balanced_weights(&[0, 0, 0, 1], 2);
        assert!((w[3] - 0.5).abs() < 1e-15 && (w[0] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        let bad = TrainerConfig { alpha: 0.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TrainerConfig { epochs: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    fn toy() -> (DenseMatrix, GraphData, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<usize> = (0..12).map(|i| i % 2).collect();
        let x = DenseMatrix::from_fn(12, 3, |i, j| {
            (if labels[i] == 1 { 1.0 } else { -1.0 }) * (j as f64 + 1.0) * 0.5 + rng.gen_range(-0.3..0.3)
        });
        let g = crate::graph::knn_graph(&x, 2, crate::graph::Metric::Euclidean).unwrap();
        (x, g, labels)
    }

    #[test]
    fn per_example_gradients_sum_to_full_batch() {
        let (x, g, labels) = toy();
        let train = [0, 1, 2, 3, 5, 8];
        let task = TrainingTask {
            x: &x,
            propagation: Propagation::Graph(g.a_hat()),
            labels: &labels,
            n_classes: 2,
            train: &train,
            val: &[],
        };
        let params = GcnParams::init(&[3, 6, 2], 1).unwrap();
        let per = per_example_param_gradients(&params, &task, &train, OutputActivation::Sigmoid).unwrap();
        let mut sum = params.zeros_like();
        for p in &per {
            sum.axpy(1.0, p).unwrap();
        }
        let cache = forward(&params, task.propagation, &x, OutputActivation::Sigmoid).unwrap();
        let losses = per_example_ce(&cache.probs().select_rows(&train), &task.train_targets().unwrap(), OutputActivation::Sigmoid).unwrap();
        let wl = weighted_loss(&losses, &[1.0; 6]).unwrap();
        let full = backward(&cache, &params, task.propagation, &scatter_rows(&wl.grad_logits, &train, 12).unwrap()).unwrap();
        for (a, b) in sum.layers().iter().zip(full.layers()) {
            assert!(a.max_abs_diff(b) < 1e-10);
        }

        let single = per_example_param_gradients(&params, &task, &[3], OutputActivation::Sigmoid).unwrap();
        let task1 = TrainingTask { train: &[3], ..task };
        let cache = forward(&params, task1.propagation, &x, OutputActivation::Sigmoid).unwrap();
        let losses = per_example_ce(&cache.probs().select_rows(&[3]), &task1.train_targets().unwrap(), OutputActivation::Sigmoid).unwrap();
        let wl = weighted_loss(&losses, &[1.0]).unwrap();
        let full = backward(&cache, &params, task1.propagation, &scatter_rows(&wl.grad_logits, &[3], 12).unwrap()).unwrap();
        assert_eq!(single[0], full);
    }

    #[test]
    fn meta_gradient_equals_per_example_dot_products() {
        let (x, g, labels) = toy();
        let train = [0, 1, 2, 3, 4, 6, 7];
        let meta_nodes = [8, 9, 10, 11];
        let meta_graph = crate::graph::induced_subgraph(&g, &meta_nodes).unwrap();
        let meta_x = x.select_rows(&meta_nodes);
        let meta_labels: Vec<usize> = meta_nodes.iter().map(|&i| labels[i]).collect();
        let task = TrainingTask {
            x: &x,
            propagation: Propagation::Graph(g.a_hat()),
            labels: &labels,
            n_classes: 2,
            train: &train,
            val: &[],
        };
        let meta = MetaTask {
            x: &meta_x,
            propagation: Propagation::Graph(meta_graph.a_hat()),
            labels: &meta_labels,
        };
        let params = GcnParams::init(&[3, 8, 2], 4).unwrap();
        let alpha = 0.1;
        let mg = meta_gradient(&params, &task, &meta, alpha, OutputActivation::Sigmoid).unwrap();
        let (_, v) = meta_loss_and_grad(&params, &meta, 2, OutputActivation::Sigmoid).unwrap();
        let per = per_example_param_gradients(&params, &task, &train, OutputActivation::Sigmoid).unwrap();
        for (gi, grad_i) in mg.g.iter().zip(&per) {
            let expect = -alpha * grad_i.dot(&v).unwrap();
            assert!((gi - expect).abs() <= 1e-12 * expect.abs().max(1e-6), "{gi} vs {expect}");
        }
    }

    #[test]
    fn meta_mode_requires_meta_set() {
        let (x, g, labels) = toy();
        let task = TrainingTask {
            x: &x,
            propagation: Propagation::Graph(g.a_hat()),
            labels: &labels,
            n_classes: 2,
            train: &[0, 1, 2, 3],
            val: &[4, 5],
        };
        let cfg = TrainerConfig { epochs: 2, ..Default::default() };
        assert!(matches!(train(&task, None, &cfg), Err(Error::Param(_))));
        let empty_x = DenseMatrix::zeros(0, 3);
        let empty_graph = GraphData::from_edges(0, &[]).unwrap();
        let meta = MetaTask {
            x: &empty_x,
            propagation: Propagation::Graph(empty_graph.a_hat()),
            labels: &[],
        };
        assert!(matches!(train(&task, Some(&meta), &cfg), Err(Error::Param(_))));
    }

    #[test]
    fn adam_step_moves_against_gradient() {
        let mut params = GcnParams::new(vec![DenseMatrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap()]).unwrap();
        let grads = GcnParams::new(vec![DenseMatrix::from_vec(1, 2, vec![0.5, -3.0]).unwrap()]).unwrap();
        let cfg = TrainerConfig { optimizer: OptimizerKind::Adam, alpha: 0.1, ..Default::default() };
        let mut opt = Optimizer::from_config(&cfg, &params);
        opt.step(&mut params, &grads).unwrap();
        // first Adam step moves each coordinate by ≈ lr·sign(g)
        let d = params.layers()[0].data();
        assert!((d[0] - 0.9).abs() < 1e-6 && (d[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn trainlog_csv_layout() {
        let log = TrainLog {
            epochs: vec![EpochLog {
                epoch: 1,
                train_loss: 1.5,
                meta_loss: f64::NAN,
                val: MetricReport { accuracy: 0.5, macro_f1: 0.25, auc_roc: 0.75 },
                w_min: 0.0,
                w_mean: 0.125,
                w_max: 0.5,
                class_mean_weight: vec![0.1, 0.2],
            }],
        };
        assert_eq!(log.to_csv(), format!("{TRAINLOG_HEADER}\n1,1.5,NaN,0.5,0.25,0.75,0,0.125,0.5\n"));
    }
}
