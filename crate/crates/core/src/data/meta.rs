use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{SplitAssignment, TabularDataset};
use crate::error::{Error, Result};
use crate::graph::{induced_subgraph, GraphData};
use crate::linalg::DenseMatrix;

/// Class-balanced sample of the meta pool with its induced graph.
#[derive(Debug, Clone)]
pub struct MetaSet {
    /// Node indices into the full graph, sorted ascending.
    pub node_indices: Vec<usize>,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub graph: GraphData,
    /// Classes whose pool was smaller than the requested count.
    pub warnings: Vec<String>,
}

impl MetaSet {
    pub fn len(&self) -> usize {
        self.node_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_indices.is_empty()
    }
}

/// Draws `per_class` pool members of every class uniformly without
/// replacement. `None` uses the smallest class count in the pool, which
/// downsamples the majority to balance the whole pool.
pub fn sample_meta_set(
    d: &TabularDataset,
    splits: &SplitAssignment,
    g: &GraphData,
    per_class: Option<usize>,
    seed: u64,
) -> Result<MetaSet> {
    if g.n_nodes() != d.n_nodes() {
        return Err(Error::Param(format!(
            "graph has {} nodes, dataset {}",
            g.n_nodes(),
            d.n_nodes()
        )));
    }
    let by_class: Vec<Vec<usize>> = (0..d.class_count)
        .map(|c| {
            splits
                .meta_pool
                .iter()
                .copied()
                .filter(|&i| d.labels[i] == c)
                .collect()
        })
        .collect();
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::Param(format!("meta pool has no examples of class {c}")));
    }
    let per_class = per_class.unwrap_or_else(|| by_class.iter().map(Vec::len).min().unwrap_or(0));
    if per_class == 0 {
        return Err(Error::Param("meta set needs at least one example per class".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    let mut nodes = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < per_class {
            let msg = format!(
                "meta pool has {} examples of class {c}, fewer than the {per_class} requested; using all",
                members.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        nodes.extend(members.choose_multiple(&mut rng, per_class.min(members.len())).copied());
    }
    nodes.sort_unstable();
    let graph = induced_subgraph(g, &nodes)?;
    Ok(MetaSet {
        features: d.features.select_rows(&nodes),
        labels: nodes.iter().map(|&i| d.labels[i]).collect(),
        node_indices: nodes,
        graph,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split;
    use crate::graph::{knn_graph, Metric};

    fn setup() -> (TabularDataset, SplitAssignment, GraphData) {
        let labels: Vec<usize> = (0..200).map(|i| usize::from(i % 4 == 0)).collect();
        let x = DenseMatrix::from_fn(200, 2, |i, j| ((i * 31 + j * 17) % 23) as f64);
        let d = TabularDataset::new("t", x, labels).unwrap();
        let s = split(&d, 1).unwrap();
        let g = knn_graph(&d.features, 3, Metric::Euclidean).unwrap();
        (d, s, g)
    }

    #[test]
    fn one_per_class() {
        let (d, s, g) = setup();
        let m = sample_meta_set(&d, &s, &g, Some(1), 0).unwrap();
        assert_eq!(m.len(), 2);
        let mut labels = m.labels.clone();
        labels.sort();
        assert_eq!(labels, vec![0, 1]);
        assert!(m.node_indices.iter().all(|i| s.meta_pool.contains(i)));
        assert_eq!(m.graph.n_nodes(), m.len());
    }

    #[test]
    fn default_balances_pool() {
        let (d, s, g) = setup();
        let m = sample_meta_set(&d, &s, &g, None, 0).unwrap();
        let ones = m.labels.iter().filter(|&&y| y == 1).count();
        assert_eq!(ones * 2, m.len());
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn oversized_request_takes_whole_minority_pool() {
        let (d, s, g) = setup();
        let minority_pool = s.meta_pool.iter().filter(|&&i| d.labels[i] == 1).count();
        let m = sample_meta_set(&d, &s, &g, Some(minority_pool + 3), 0).unwrap();
        assert_eq!(m.labels.iter().filter(|&&y| y == 1).count(), minority_pool);
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn empty_class_pool_is_error() {
        let (d, mut s, g) = setup();
        s.meta_pool.retain(|&i| d.labels[i] == 0);
        assert!(matches!(sample_meta_set(&d, &s, &g, None, 0), Err(Error::Param(_))));
    }

    #[test]
    fn class_histogram_uniform_over_seeds() {
        // each pool member of a class should be drawn with equal probability
        let (d, s, g) = setup();
        let pool0: Vec<usize> = s.meta_pool.iter().copied().filter(|&i| d.labels[i] == 0).collect();
        let per_class = 3;
        let trials = 1000;
        let mut hits = std::collections::HashMap::new();
        for seed in 0..trials {
            let m = sample_meta_set(&d, &s, &g, Some(per_class), seed).unwrap();
            let ones = m.labels.iter().filter(|&&y| y == 1).count();
            assert_eq!(ones, per_class);
            assert_eq!(m.len(), 2 * per_class);
            for (&i, &y) in m.node_indices.iter().zip(&m.labels) {
                if y == 0 {
                    *hits.entry(i).or_insert(0usize) += 1;
                }
            }
        }
        let expected = trials as f64 * per_class as f64 / pool0.len() as f64;
        let chi2: f64 = pool0
            .iter()
            .map(|i| {
                let o = *hits.get(i).unwrap_or(&0) as f64;
                (o - expected).powi(2) / expected
            })
            .sum();
        // df = |pool0| - 1 ≈ 14; 99.9th percentile ≈ 36
        assert!(chi2 < 36.0, "chi2 = {chi2}");
    }
}
