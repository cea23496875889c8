//! Node graph construction and the normalized propagation matrix.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

impl Metric {
    /// Monotone in the true distance; squared for Euclidean.
    fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::Cosine => {
                let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    ab += x * y;
                    aa += x * x;
                    bb += y * y;
                }
                if aa == 0.0 || bb == 0.0 {
                    1.0
                } else {
                    1.0 - ab / (aa.sqrt() * bb.sqrt())
                }
            }
        }
    }
}

/// Undirected binary graph plus its renormalized propagation matrix.
#[derive(Debug, Clone)]
pub struct GraphData {
    n_nodes: usize,
    adjacency: SparseMatrix,
    a_hat: SparseMatrix,
}

impl GraphData {
    /// Validates `adjacency` (binary, symmetric, no self-loops) and computes `Â`.
    pub fn from_adjacency(adjacency: SparseMatrix) -> Result<Self> {
        let a_hat = normalize_adjacency(&adjacency)?;
        Ok(Self {
            n_nodes: adjacency.rows(),
            adjacency,
            a_hat,
        })
    }

    /// Graph from an undirected edge list; duplicates and orientation are ignored.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut t = Vec::with_capacity(edges.len() * 2);
        for &(i, j) in edges {
            if i == j {
                return Err(Error::Param(format!("self-loop at node {i}")));
            }
            t.push((i, j, 1.0));
            t.push((j, i, 1.0));
        }
        let mut adj = SparseMatrix::from_triplets(n_nodes, n_nodes, t)?;
        // duplicate edges sum above 1
        adj = SparseMatrix::from_triplets(n_nodes, n_nodes, adj.iter().map(|(i, j, _)| (i, j, 1.0)))?;
        Self::from_adjacency(adj)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn a_hat(&self) -> &SparseMatrix {
        &self.a_hat
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .filter(|&(i, j, _)| i < j)
            .map(|(i, j, _)| (i, j))
            .collect()
    }

    /// Writes one `i j` line per undirected edge.
    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        for (i, j) in self.edges() {
            writeln!(f, "{i} {j}").map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads whitespace-separated `i j` pairs; blank lines and `#` comments
    /// are skipped.
    pub fn read_edge_list(path: &Path, n_nodes: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut edges = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                msg,
            };
            let ids: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| parse_err(format!("bad node index `{t}`"))))
                .collect::<Result<_>>()?;
            match ids[..] {
                [i, j] if i < n_nodes && j < n_nodes && i != j => edges.push((i, j)),
                [_, _] => return Err(parse_err(format!("edge `{line}` out of range or a self-loop"))),
                _ => return Err(parse_err("expected two node indices".into())),
            }
        }
        Self::from_edges(n_nodes, &edges)
    }
}

/// Indices of the `k` nearest rows to `query` among `candidates`, ties broken
/// by lower index.
pub(crate) fn nearest(
    features: &DenseMatrix,
    query: &[f64],
    candidates: impl Iterator<Item = usize>,
    k: usize,
    metric: Metric,
) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = candidates
        .map(|j| (metric.distance(query, features.row(j)), j))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(k);
    scored.into_iter().map(|(_, j)| j).collect()
}

/// Symmetrized k-nearest-neighbour graph: `i–j` is an edge when either node
/// selected the other.
pub fn knn_graph(features: &DenseMatrix, k: usize, metric: Metric) -> Result<GraphData> {
    let n = features.rows();
    if k == 0 || k >= n {
        return Err(Error::Param(format!("k = {k} must lie in [1, {})", n)));
    }
    let mut edges = Vec::with_capacity(n * k);
    for i in 0..n {
        for j in nearest(features, features.row(i), (0..n).filter(|&j| j != i), k, metric) {
            edges.push((i, j));
        }
    }
    GraphData::from_edges(n, &edges)
}

/// `Â = D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the row sums of `A + I`.
pub fn normalize_adjacency(adjacency: &SparseMatrix) -> Result<SparseMatrix> {
    let n = adjacency.rows();
    if adjacency.cols() != n {
        return Err(Error::Contract(format!(
            "adjacency must be square, got {:?}",
            adjacency.shape()
        )));
    }
    for (i, j, v) in adjacency.iter() {
        if i == j {
            return Err(Error::Contract(format!("adjacency has self-loop at {i}")));
        }
        if v != 1.0 {
            return Err(Error::Contract(format!("adjacency entry ({i}, {j}) = {v} is not binary")));
        }
    }
    if !adjacency.is_structurally_symmetric() {
        return Err(Error::Contract("adjacency is not symmetric".into()));
    }
    let degree: Vec<f64> = (0..n).map(|i| adjacency.row(i).0.len() as f64 + 1.0).collect();
    let triplets = adjacency
        .iter()
        .chain((0..n).map(|i| (i, i, 1.0)))
        .map(|(i, j, v)| (i, j, v / (degree[i] * degree[j]).sqrt()));
    SparseMatrix::from_triplets(n, n, triplets)
}

/// Subgraph on `nodes` (in that order) keeping every edge with both ends kept.
pub fn induced_subgraph(g: &GraphData, nodes: &[usize]) -> Result<GraphData> {
    let n = g.n_nodes();
    let mut position = vec![usize::MAX; n];
    for (p, &v) in nodes.iter().enumerate() {
        if v >= n {
            return Err(Error::Param(format!("node {v} out of range for {n} nodes")));
        }
        if position[v] != usize::MAX {
            return Err(Error::Param(format!("node {v} listed twice")));
        }
        position[v] = p;
    }
    let mut edges = Vec::new();
    for (p, &v) in nodes.iter().enumerate() {
        for &u in g.adjacency().row(v).0 {
            if position[u] != usize::MAX && p < position[u] {
                edges.push((p, position[u]));
            }
        }
    }
    GraphData::from_edges(nodes.len(), &edges)
}
