//! Central finite-difference checks of every analytic gradient in the crate.
//!
//! Used by the `gradcheck` CLI subcommand. Instances are small random graphs
//! (N ≤ 10, F ≤ 4, C = 2) drawn from a seeded generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::graph::{induced_subgraph, GraphData};
use crate::linalg::DenseMatrix;
use crate::loss::{one_hot, per_example_ce, scatter_rows, weighted_loss};
use crate::model::{backward, forward, GcnParams, OutputActivation, Propagation};
use crate::trainer::{meta_gradient, MetaTask, TrainingTask};

pub const PARAM_FD_STEP: f64 = 1e-5;
pub const PARAM_REL_TOL: f64 = 1e-6;
pub const PARAM_ABS_FLOOR: f64 = 1e-8;
pub const META_FD_STEP: f64 = 1e-3;
pub const META_REL_TOL: f64 = 1e-4;
pub const META_ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub entries: usize,
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|)` among
    /// entries above the absolute floor.
    pub max_rel_error: f64,
    pub failures: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// True when `|a − b| ≤ max(rel · max(|a|, |b|), abs_floor)`.
pub fn within(a: f64, b: f64, rel: f64, abs_floor: f64) -> bool {
    (a - b).abs() <= f64::max(rel * a.abs().max(b.abs()), abs_floor)
}

fn rel_error(a: f64, b: f64, abs_floor: f64) -> f64 {
    let diff = (a - b).abs();
    if diff <= abs_floor {
        0.0
    } else {
        diff / a.abs().max(b.abs())
    }
}

/// A random small node-classification instance.
pub struct Instance {
    pub x: DenseMatrix,
    pub graph: GraphData,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub meta_nodes: Vec<usize>,
    pub params: GcnParams,
    pub alpha: f64,
}

impl Instance {
    pub fn random(rng: &mut impl Rng) -> Result<Self> {
        let n = rng.gen_range(4..=10);
        let f = rng.gen_range(1..=4);
        let hidden = rng.gen_range(2..=6);
        let x = DenseMatrix::from_fn(n, f, |_, _| rng.gen_range(-1.5..1.5));
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(0.35) {
                    edges.push((i, j));
                }
            }
        }
        let graph = GraphData::from_edges(n, &edges)?;
        let labels: Vec<usize> = (0..n).map(|i| if i < 2 { i } else { rng.gen_range(0..2) }).collect();
        let n_meta = rng.gen_range(2..=(n / 2).max(2));
        // meta nodes are the last n_meta; training nodes the rest
        let meta_nodes: Vec<usize> = (n - n_meta..n).collect();
        let train: Vec<usize> = (0..n - n_meta).collect();
        let params = GcnParams::init(&[f, hidden, 2], rng.gen())?;
        Ok(Self {
            x,
            graph,
            labels,
            train,
            meta_nodes,
            params,
            alpha: rng.gen_range(0.01..0.5),
        })
    }
}

fn param_check(
    name: &str,
    instances: usize,
    seed: u64,
    propagation_for: impl Fn(&Instance) -> bool,
) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CheckResult {
        name: name.into(),
        instances,
        entries: 0,
        max_rel_error: 0.0,
        failures: 0,
    };
    let output = OutputActivation::Sigmoid;
    for _ in 0..instances {
        let inst = Instance::random(&mut rng)?;
        let prop = if propagation_for(&inst) {
            Propagation::Graph(inst.graph.a_hat())
        } else {
            Propagation::Identity
        };
        let n = inst.x.rows();
        let all: Vec<usize> = (0..n).collect();
        let targets = one_hot(&inst.labels, 2)?;
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let loss_at = |p: &GcnParams| -> Result<f64> {
            let c = forward(p, prop, &inst.x, output)?;
            Ok(weighted_loss(&per_example_ce(c.probs(), &targets, output)?, &w)?.value)
        };
        let cache = forward(&inst.params, prop, &inst.x, output)?;
        let wl = weighted_loss(&per_example_ce(cache.probs(), &targets, output)?, &w)?;
        let analytic = backward(&cache, &inst.params, prop, &scatter_rows(&wl.grad_logits, &all, n)?)?;
        for l in 0..inst.params.layers().len() {
            for k in 0..inst.params.layers()[l].data().len() {
                let mut plus = inst.params.clone();
                plus.layers_mut()[l].data_mut()[k] += PARAM_FD_STEP;
                let mut minus = inst.params.clone();
                minus.layers_mut()[l].data_mut()[k] -= PARAM_FD_STEP;
                let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * PARAM_FD_STEP);
                let a = analytic.layers()[l].data()[k];
                out.entries += 1;
                out.max_rel_error = out.max_rel_error.max(rel_error(a, fd, PARAM_ABS_FLOOR));
                if !within(a, fd, PARAM_REL_TOL, PARAM_ABS_FLOOR) {
                    out.failures += 1;
                }
            }
        }
    }
    Ok(out)
}

/// GCN parameter gradients against central differences.
pub fn check_gcn_gradients(instances: usize, seed: u64) -> Result<CheckResult> {
    param_check("gcn parameter gradient", instances, seed, |_| true)
}

/// MLP parameter gradients against central differences.
pub fn check_mlp_gradients(instances: usize, seed: u64) -> Result<CheckResult> {
    param_check("mlp parameter gradient", instances, seed, |_| false)
}

/// Meta loss after the literal perturbed step `θ̂(γ) = θ − α ∇_θ Σᵢ γᵢ lᵢ(θ)`.
pub fn perturbed_meta_loss(inst: &Instance, gamma: &[f64]) -> Result<f64> {
    let output = OutputActivation::Sigmoid;
    let prop = Propagation::Graph(inst.graph.a_hat());
    let n = inst.x.rows();
    let cache = forward(&inst.params, prop, &inst.x, output)?;
    let train_labels: Vec<usize> = inst.train.iter().map(|&i| inst.labels[i]).collect();
    let per = per_example_ce(&cache.probs().select_rows(&inst.train), &one_hot(&train_labels, 2)?, output)?;
    // signed γ: build the γ-weighted logit gradient directly
    let mut upstream = DenseMatrix::zeros(n, 2);
    for (k, &i) in inst.train.iter().enumerate() {
        for (u, r) in upstream.row_mut(i).iter_mut().zip(per.residuals().row(k)) {
            *u = gamma[k] * r;
        }
    }
    let grad = backward(&cache, &inst.params, prop, &upstream)?;
    let mut theta_hat = inst.params.clone();
    theta_hat.axpy(-inst.alpha, &grad)?;

    let meta_graph = induced_subgraph(&inst.graph, &inst.meta_nodes)?;
    let meta_x = inst.x.select_rows(&inst.meta_nodes);
    let meta_labels: Vec<usize> = inst.meta_nodes.iter().map(|&i| inst.labels[i]).collect();
    let mc = forward(&theta_hat, Propagation::Graph(meta_graph.a_hat()), &meta_x, output)?;
    crate::loss::meta_loss(mc.probs(), &one_hot(&meta_labels, 2)?, output)
}

/// Closed-form meta-gradient against central differences in each `γᵢ`.
pub fn check_meta_gradients(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CheckResult {
        name: "meta-gradient dL_meta/dgamma".into(),
        instances,
        entries: 0,
        max_rel_error: 0.0,
        failures: 0,
    };
    for _ in 0..instances {
        let inst = Instance::random(&mut rng)?;
        let meta_graph = induced_subgraph(&inst.graph, &inst.meta_nodes)?;
        let meta_x = inst.x.select_rows(&inst.meta_nodes);
        let meta_labels: Vec<usize> = inst.meta_nodes.iter().map(|&i| inst.labels[i]).collect();
        let task = TrainingTask {
            x: &inst.x,
            propagation: Propagation::Graph(inst.graph.a_hat()),
            labels: &inst.labels,
            n_classes: 2,
            train: &inst.train,
            val: &[],
        };
        let meta = MetaTask {
            x: &meta_x,
            propagation: Propagation::Graph(meta_graph.a_hat()),
            labels: &meta_labels,
        };
        let analytic = meta_gradient(&inst.params, &task, &meta, inst.alpha, OutputActivation::Sigmoid)?.g;
        for (k, &a) in analytic.iter().enumerate() {
            let mut gamma = vec![0.0; inst.train.len()];
            gamma[k] = META_FD_STEP;
            let plus = perturbed_meta_loss(&inst, &gamma)?;
            gamma[k] = -META_FD_STEP;
            let minus = perturbed_meta_loss(&inst, &gamma)?;
            let fd = (plus - minus) / (2.0 * META_FD_STEP);
            out.entries += 1;
            out.max_rel_error = out.max_rel_error.max(rel_error(a, fd, META_ABS_FLOOR));
            if !within(a, fd, META_REL_TOL, META_ABS_FLOOR) {
                out.failures += 1;
            }
        }
    }
    Ok(out)
}

/// Every check with the default instance counts.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_gcn_gradients(20, seed)?,
        check_mlp_gradients(20, seed.wrapping_add(1))?,
        check_meta_gradients(25, seed.wrapping_add(2))?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for r in run_all(0).unwrap() {
            assert!(r.passed(), "{r:?}");
            assert!(r.entries > 0);
        }
    }

    #[test]
    fn within_uses_floor_and_relative() {
        assert!(within(1.0, 1.0 + 1e-7, 1e-6, 0.0));
        assert!(!within(1.0, 1.0 + 1e-5, 1e-6, 0.0));
        assert!(within(1e-10, 5e-9, 1e-6, 1e-8));
    }
}
