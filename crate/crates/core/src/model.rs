//! GCN and MLP with hand-derived reverse-mode gradients.
//!
//! Layer `l` computes `Z^l = σ(P Z^{l-1} θ^l)` where `P` is the propagation
//! matrix `Â` (GCN) or the identity (MLP). Hidden layers use ReLU, the last
//! layer is linear and its logits pass through a sigmoid (default) or
//! softmax. No bias terms.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SparseMatrix};

/// Hidden width used throughout the experiments.
pub const HIDDEN_UNITS: usize = 32;

const CHECKPOINT_MAGIC: &[u8; 4] = b"MGCN";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Sigmoid,
    Softmax,
}

impl std::str::FromStr for OutputActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Self::Sigmoid),
            "softmax" => Ok(Self::Softmax),
            other => Err(Error::Config(format!("unknown output activation `{other}`"))),
        }
    }
}

/// Propagation operator applied before every layer's weight matrix.
#[derive(Debug, Clone, Copy)]
pub enum Propagation<'a> {
    /// Symmetric normalized adjacency `Â`.
    Graph(&'a SparseMatrix),
    /// No message passing (MLP).
    Identity,
}

impl Propagation<'_> {
    fn apply(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            Propagation::Graph(a_hat) => a_hat.spmm(m),
            Propagation::Identity => Ok(m.clone()),
        }
    }

    /// Applies `Pᵀ`; relies on `Â` being symmetric.
    fn apply_transpose(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        self.apply(m)
    }

    fn check_nodes(&self, n: usize) -> Result<()> {
        match self {
            Propagation::Graph(a_hat) if a_hat.shape() != (n, n) => {
                Err(Error::shape("propagation", a_hat.shape(), (n, n)))
            }
            _ => Ok(()),
        }
    }
}

/// Per-layer weight matrices. Also used as the container for gradients and
/// tangent directions, which share the parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    layers: Vec<DenseMatrix>,
}

impl GcnParams {
    pub fn new(layers: Vec<DenseMatrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Param("at least one layer required".into()));
        }
        for w in layers.windows(2) {
            if w[0].cols() != w[1].rows() {
                return Err(Error::shape("GcnParams::new", w[0].shape(), w[1].shape()));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform initialization, bound `√(6 / (fan_in + fan_out))`.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Param(format!("invalid layer widths {widths:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = glorot_bound(w[0], w[1]);
                DenseMatrix::from_fn(w[0], w[1], |_, _| rng.gen_range(-bound..=bound))
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|m| DenseMatrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[DenseMatrix] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(DenseMatrix::rows).collect();
        w.push(self.layers.last().map_or(0, DenseMatrix::cols));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|m| m.data().len()).sum()
    }

    /// Frobenius inner product summed over all layers.
    pub fn dot(&self, other: &GcnParams) -> Result<f64> {
        self.check_same_shape(other)?;
        let mut acc = 0.0;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            acc += a.frobenius_dot(b)?;
        }
        Ok(acc)
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &GcnParams) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.axpy(factor, b)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseMatrix::is_finite)
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|m| m.data().iter().all(|&v| v == 0.0))
    }

    fn check_same_shape(&self, other: &GcnParams) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Contract(format!(
                "layer count {} vs {}",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a.shape() != b.shape() {
                return Err(Error::shape("GcnParams", a.shape(), b.shape()));
            }
        }
        Ok(())
    }

    /// Binary checkpoint: magic, version, layer count, then per layer
    /// `rows`, `cols` (u64) and row-major `f64` values, all little-endian.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for m in &self.layers {
            w.write_all(&(m.rows() as u64).to_le_bytes())?;
            w.write_all(&(m.cols() as u64).to_le_bytes())?;
            for v in m.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        fn bad(msg: &str) -> Error {
            Error::Data(format!("checkpoint: {msg}"))
        }
        let mut read = |buf: &mut [u8]| r.read_exact(buf).map_err(|_| bad("truncated"));
        let mut magic = [0u8; 4];
        read(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32buf = [0u8; 4];
        read(&mut u32buf)?;
        if u32::from_le_bytes(u32buf) != CHECKPOINT_VERSION {
            return Err(bad("unsupported version"));
        }
        read(&mut u32buf)?;
        let n_layers = u32::from_le_bytes(u32buf) as usize;
        let mut layers = Vec::with_capacity(n_layers);
        let mut u64buf = [0u8; 8];
        for _ in 0..n_layers {
            read(&mut u64buf)?;
            let rows = u64::from_le_bytes(u64buf) as usize;
            read(&mut u64buf)?;
            let cols = u64::from_le_bytes(u64buf) as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                read(&mut u64buf)?;
                data.push(f64::from_le_bytes(u64buf));
            }
            layers.push(DenseMatrix::from_vec(rows, cols, data)?);
        }
        Self::new(layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Intermediates retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `P Z^{l-1}` for each layer.
    propagated: Vec<DenseMatrix>,
    /// `P Z^{l-1} θ^l` for each layer.
    pre_activations: Vec<DenseMatrix>,
    /// `Z^0 … Z^n`; `Z^0` is the input and `Z^n` the logits.
    activations: Vec<DenseMatrix>,
    probs: DenseMatrix,
}

impl ForwardCache {
    pub fn input(&self) -> &DenseMatrix {
        &self.activations[0]
    }

    pub fn activations(&self) -> &[DenseMatrix] {
        &self.activations
    }

    pub fn pre_activations(&self) -> &[DenseMatrix] {
        &self.pre_activations
    }

    pub fn logits(&self) -> &DenseMatrix {
        self.activations.last().expect("at least one layer")
    }

    pub fn probs(&self) -> &DenseMatrix {
        &self.probs
    }

    pub fn n_nodes(&self) -> usize {
        self.probs.rows()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn output_probs(logits: &DenseMatrix, output: OutputActivation) -> DenseMatrix {
    match output {
        OutputActivation::Sigmoid => logits.map(sigmoid),
        OutputActivation::Softmax => {
            let mut p = logits.clone();
            for i in 0..p.rows() {
                let row = p.row_mut(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
            p
        }
    }
}

fn relu_mask(pre: &DenseMatrix) -> DenseMatrix {
    pre.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

pub fn forward(
    params: &GcnParams,
    prop: Propagation<'_>,
    x: &DenseMatrix,
    output: OutputActivation,
) -> Result<ForwardCache> {
    prop.check_nodes(x.rows())?;
    let n_layers = params.layers.len();
    let mut propagated = Vec::with_capacity(n_layers);
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut activations = Vec::with_capacity(n_layers + 1);
    activations.push(x.clone());
    for (l, theta) in params.layers.iter().enumerate() {
        let p = prop.apply(&activations[l])?;
        let s = p.matmul(theta)?;
        let z = if l + 1 < n_layers {
            s.map(|v| v.max(0.0))
        } else {
            s.clone()
        };
        propagated.push(p);
        pre_activations.push(s);
        activations.push(z);
    }
    let logits = activations.last().expect("non-empty");
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite logits in forward pass".into()));
    }
    let probs = output_probs(logits, output);
    Ok(ForwardCache {
        propagated,
        pre_activations,
        activations,
        probs,
    })
}

pub fn gcn_forward(params: &GcnParams, a_hat: &SparseMatrix, x: &DenseMatrix) -> Result<ForwardCache> {
    forward(params, Propagation::Graph(a_hat), x, OutputActivation::Sigmoid)
}

pub fn mlp_forward(params: &GcnParams, x: &DenseMatrix) -> Result<ForwardCache> {
    forward(params, Propagation::Identity, x, OutputActivation::Sigmoid)
}

/// Reverse pass given `upstream = ∂L/∂logits` (N×C).
pub fn backward(
    cache: &ForwardCache,
    params: &GcnParams,
    prop: Propagation<'_>,
    upstream: &DenseMatrix,
) -> Result<GcnParams> {
    let n_layers = params.layers.len();
    if cache.pre_activations.len() != n_layers {
        return Err(Error::Contract(format!(
            "cache has {} layers, params have {n_layers}",
            cache.pre_activations.len()
        )));
    }
    if upstream.shape() != cache.logits().shape() {
        return Err(Error::shape("backward", upstream.shape(), cache.logits().shape()));
    }
    for (l, theta) in params.layers.iter().enumerate() {
        if cache.propagated[l].cols() != theta.rows()
            || cache.pre_activations[l].cols() != theta.cols()
        {
            return Err(Error::Contract(format!("cache/params mismatch at layer {l}")));
        }
    }
    let mut grads = Vec::with_capacity(n_layers);
    let mut g = upstream.clone();
    for l in (0..n_layers).rev() {
        grads.push(cache.propagated[l].t_matmul(&g)?);
        if l > 0 {
            let d_act = prop.apply_transpose(&g.matmul_t(&params.layers[l])?)?;
            g = d_act.hadamard(&relu_mask(&cache.pre_activations[l - 1]))?;
        }
    }
    grads.reverse();
    Ok(GcnParams { layers: grads })
}

pub fn gcn_backward(
    cache: &ForwardCache,
    params: &GcnParams,
    a_hat: &SparseMatrix,
    per_node_loss_grad: &DenseMatrix,
) -> Result<GcnParams> {
    backward(cache, params, Propagation::Graph(a_hat), per_node_loss_grad)
}

pub fn mlp_backward(
    cache: &ForwardCache,
    params: &GcnParams,
    per_node_loss_grad: &DenseMatrix,
) -> Result<GcnParams> {
    backward(cache, params, Propagation::Identity, per_node_loss_grad)
}

/// Forward-mode tangent of the logits along parameter direction `direction`.
///
/// Row `i` of the result dotted with `∂lᵢ/∂logitsᵢ` gives `⟨∇_θ lᵢ, direction⟩`
/// for every node in one pass.
pub fn jvp(
    cache: &ForwardCache,
    params: &GcnParams,
    prop: Propagation<'_>,
    direction: &GcnParams,
) -> Result<DenseMatrix> {
    params.check_same_shape(direction)?;
    let n_layers = params.layers.len();
    let mut tangent: Option<DenseMatrix> = None;
    for l in 0..n_layers {
        let mut ds = cache.propagated[l].matmul(&direction.layers[l])?;
        if let Some(dz) = &tangent {
            ds.axpy(1.0, &prop.apply(dz)?.matmul(&params.layers[l])?)?;
        }
        tangent = Some(if l + 1 < n_layers {
            ds.hadamard(&relu_mask(&cache.pre_activations[l]))?
        } else {
            ds
        });
    }
    Ok(tangent.expect("at least one layer"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphData;

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> GraphData {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(0.4) {
                    edges.push((i, j));
                }
            }
        }
        GraphData::from_edges(n, &edges).unwrap()
    }

    fn random_dense(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_second_layer_gives_half() {
        let n = 4;
        let x = DenseMatrix::from_fn(n, HIDDEN_UNITS, |i, j| (i + j) as f64 * 0.1);
        let params = GcnParams::new(vec![
            DenseMatrix::identity(HIDDEN_UNITS),
            DenseMatrix::zeros(HIDDEN_UNITS, 2),
        ])
        .unwrap();
        let cache = gcn_forward(&params, &SparseMatrix::identity(n), &x).unwrap();
        assert!(cache.logits().data().iter().all(|&v| v == 0.0));
        assert!(cache.probs().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_input_gives_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_graph(&mut rng, 5);
        let params = GcnParams::init(&[3, HIDDEN_UNITS, 2], 9).unwrap();
        let x = DenseMatrix::zeros(5, 3);
        assert!(gcn_forward(&params, g.a_hat(), &x).unwrap().probs().data().iter().all(|&v| v == 0.5));
        assert!(mlp_forward(&params, &x).unwrap().probs().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_matches_dense_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_graph(&mut rng, 6);
        let x = random_dense(&mut rng, 6, 3);
        let params = GcnParams::init(&[3, 5, 2], 1).unwrap();
        let cache = gcn_forward(&params, g.a_hat(), &x).unwrap();

        let a = g.a_hat().to_dense();
        let (t1, t2) = (&params.layers()[0], &params.layers()[1]);
        for i in 0..6 {
            for c in 0..2 {
                let mut logit = 0.0;
                for k in 0..6 {
                    for h in 0..5 {
                        let mut s = 0.0;
                        for m in 0..6 {
                            for f in 0..3 {
                                s += a.get(k, m) * x.get(m, f) * t1.get(f, h);
                            }
                        }
                        logit += a.get(i, k) * s.max(0.0) * t2.get(h, c);
                    }
                }
                assert!((cache.logits().get(i, c) - logit).abs() < 1e-12);
                let p = 1.0 / (1.0 + (-logit).exp());
                assert!((cache.probs().get(i, c) - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gcn_with_identity_is_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_dense(&mut rng, 7, 4);
        let params = GcnParams::init(&[4, HIDDEN_UNITS, 2], 3).unwrap();
        let a = gcn_forward(&params, &SparseMatrix::identity(7), &x).unwrap();
        let b = mlp_forward(&params, &x).unwrap();
        assert_eq!(a.probs(), b.probs());
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_graph(&mut rng, 5);
        let x = random_dense(&mut rng, 5, 3);
        let params = GcnParams::init(&[3, 4, 2], 0).unwrap();
        let cache = gcn_forward(&params, g.a_hat(), &x).unwrap();
        let grads = gcn_backward(&cache, &params, g.a_hat(), &DenseMatrix::zeros(5, 2)).unwrap();
        assert!(grads.is_zero());
    }

    #[test]
    fn single_node_chain_rule() {
        // N=1, F=1, hidden=1, C=1: logit = relu(x·a)·b with Â = [[1]].
        let (x, a, b) = (0.7, 1.3, -0.4);
        let params = GcnParams::new(vec![
            DenseMatrix::from_vec(1, 1, vec![a]).unwrap(),
            DenseMatrix::from_vec(1, 1, vec![b]).unwrap(),
        ])
        .unwrap();
        let xm = DenseMatrix::from_vec(1, 1, vec![x]).unwrap();
        let g_hat = GraphData::from_edges(1, &[]).unwrap();
        let cache = gcn_forward(&params, g_hat.a_hat(), &xm).unwrap();
        // L = logit, so dL/da = x·b, dL/db = x·a
        let grads = gcn_backward(&cache, &params, g_hat.a_hat(), &DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
        assert!((grads.layers()[0].get(0, 0) - x * b).abs() < 1e-15);
        assert!((grads.layers()[1].get(0, 0) - x * a).abs() < 1e-15);
    }

    #[test]
    fn backward_shape_mismatch() {
        let params = GcnParams::init(&[3, 4, 2], 0).unwrap();
        let x = DenseMatrix::zeros(5, 3);
        let cache = mlp_forward(&params, &x).unwrap();
        assert!(mlp_backward(&cache, &params, &DenseMatrix::zeros(5, 3)).is_err());
        let other = GcnParams::init(&[3, 6, 2], 0).unwrap();
        assert!(matches!(
            mlp_backward(&cache, &other, &DenseMatrix::zeros(5, 2)),
            Err(Error::Contract(_))
        ));
        assert!(gcn_forward(&params, &SparseMatrix::identity(4), &x).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = GcnParams::init(&[8, HIDDEN_UNITS, 2], 42).unwrap();
        let b = GcnParams::init(&[8, HIDDEN_UNITS, 2], 42).unwrap();
        let c = GcnParams::init(&[8, HIDDEN_UNITS, 2], 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.widths(), vec![8, HIDDEN_UNITS, 2]);
        for (m, (fi, fo)) in a.layers().iter().zip([(8, HIDDEN_UNITS), (HIDDEN_UNITS, 2)]) {
            let bound = glorot_bound(fi, fo);
            assert!(m.data().iter().all(|v| v.abs() <= bound));
        }
        assert!(GcnParams::init(&[3], 0).is_err());
    }

    #[test]
    fn jvp_matches_per_node_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = random_graph(&mut rng, 6);
        let x = random_dense(&mut rng, 6, 3);
        let params = GcnParams::init(&[3, 5, 2], 2).unwrap();
        let dir = GcnParams::init(&[3, 5, 2], 99).unwrap();
        let prop = Propagation::Graph(g.a_hat());
        let cache = forward(&params, prop, &x, OutputActivation::Sigmoid).unwrap();
        let tangent = jvp(&cache, &params, prop, &dir).unwrap();
        for i in 0..6 {
            for c in 0..2 {
                let mut up = DenseMatrix::zeros(6, 2);
                up.set(i, c, 1.0);
                let grad = backward(&cache, &params, prop, &up).unwrap();
                assert!((grad.dot(&dir).unwrap() - tangent.get(i, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_dense(&mut rng, 4, 3);
        let params = GcnParams::init(&[3, 4, 3], 2).unwrap();
        let cache = forward(&params, Propagation::Identity, &x, OutputActivation::Softmax).unwrap();
        for s in cache.probs().row_sum() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let params = GcnParams::init(&[5, HIDDEN_UNITS, 2], 17).unwrap();
        let mut buf = Vec::new();
        params.write_to(&mut buf).unwrap();
        let back = GcnParams::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, params);
        assert!(GcnParams::read_from(&buf[..buf.len() - 3]).is_err());
        assert!(GcnParams::read_from(&b"XXXX"[..]).is_err());
    }
}
