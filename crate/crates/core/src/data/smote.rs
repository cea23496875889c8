use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TabularDataset;
use crate::error::{Error, Result};
use crate::graph::{nearest, GraphData, Metric};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoteConfig {
    /// Target minority:majority ratio after oversampling.
    pub scale: f64,
    /// Minority neighbours considered for interpolation.
    pub k: usize,
    /// Neighbours each synthetic node links to among the real nodes.
    pub graph_k: usize,
    pub metric: Metric,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self {
            scale: 0.8,
            k: 5,
            graph_k: 5,
            metric: Metric::Euclidean,
        }
    }
}

/// `x = x_base + u · (x_neighbor − x_base)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSample {
    pub base: usize,
    pub neighbor: usize,
    pub u: f64,
}

#[derive(Debug, Clone)]
pub struct SmoteResult {
    /// Real rows followed by synthetic rows.
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    /// Original training nodes plus every synthetic node.
    pub train: Vec<usize>,
    pub synthetic: Vec<SyntheticSample>,
    /// Real-node graph extended with edges from each synthetic node.
    pub graph: GraphData,
    pub minority_class: usize,
}

impl SmoteResult {
    pub fn n_real(&self) -> usize {
        self.labels.len() - self.synthetic.len()
    }
}

/// Oversamples the minority class of the training nodes until it reaches
/// `round(scale · majority)` examples (never removing any). Synthetic nodes
/// attach to their `graph_k` nearest real nodes.
pub fn smote_oversample(
    d: &TabularDataset,
    g: &GraphData,
    train: &[usize],
    cfg: &SmoteConfig,
    seed: u64,
) -> Result<SmoteResult> {
    if d.class_count != 2 {
        return Err(Error::Param(format!("SMOTE needs 2 classes, found {}", d.class_count)));
    }
    if !(cfg.scale > 0.0) || cfg.k == 0 || cfg.graph_k == 0 {
        return Err(Error::Param("SMOTE needs scale > 0, k ≥ 1 and graph_k ≥ 1".into()));
    }
    if g.n_nodes() != d.n_nodes() {
        return Err(Error::Param("graph and dataset sizes differ".into()));
    }
    let mut counts = [0usize; 2];
    for &i in train {
        counts[d.labels[i]] += 1;
    }
    let minority_class = usize::from(counts[1] <= counts[0]);
    let minority: Vec<usize> = train.iter().copied().filter(|&i| d.labels[i] == minority_class).collect();
    if minority.len() < 2 {
        return Err(Error::Param(format!(
            "SMOTE needs at least 2 minority examples, found {}",
            minority.len()
        )));
    }
    let majority = counts[1 - minority_class];
    let target = (cfg.scale * majority as f64).round() as usize;
    let n_new = target.saturating_sub(minority.len());
    let k = cfg.k.min(minority.len() - 1);

    let neighbours: Vec<Vec<usize>> = minority
        .iter()
        .map(|&i| {
            nearest(
                &d.features,
                d.features.row(i),
                minority.iter().copied().filter(|&j| j != i),
                k,
                cfg.metric,
            )
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_real = d.n_nodes();
    let f = d.n_features();
    let mut data = d.features.data().to_vec();
    data.reserve(n_new * f);
    let mut synthetic = Vec::with_capacity(n_new);
    for _ in 0..n_new {
        let b = rng.gen_range(0..minority.len());
        let base = minority[b];
        let neighbor = neighbours[b][rng.gen_range(0..neighbours[b].len())];
        let u: f64 = rng.gen();
        let (xb, xn) = (d.features.row(base), d.features.row(neighbor));
        data.extend(xb.iter().zip(xn).map(|(&a, &c)| a + u * (c - a)));
        synthetic.push(SyntheticSample { base, neighbor, u });
    }
    let features = DenseMatrix::from_vec(n_real + n_new, f, data)?;

    let mut edges = g.edges();
    let graph_k = cfg.graph_k.min(n_real);
    for s in 0..n_new {
        let node = n_real + s;
        for j in nearest(&features, features.row(node), 0..n_real, graph_k, cfg.metric) {
            edges.push((j, node));
        }
    }
    let graph = GraphData::from_edges(n_real + n_new, &edges)?;

    let mut labels = d.labels.clone();
    labels.extend(std::iter::repeat(minority_class).take(n_new));
    let mut train_out = train.to_vec();
    train_out.extend(n_real..n_real + n_new);
    Ok(SmoteResult {
        features,
        labels,
        train: train_out,
        synthetic,
        graph,
        minority_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::knn_graph;

    fn setup(n_major: usize, n_minor: usize) -> (TabularDataset, GraphData, Vec<usize>) {
        let n = n_major + n_minor;
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n_major)).collect();
        let x = DenseMatrix::from_fn(n, 3, |i, j| (((i * 37 + j * 11) % 29) as f64 - 14.0) / 7.0);
        let d = TabularDataset::new("t", x, labels).unwrap();
        let g = knn_graph(&d.features, 3, Metric::Euclidean).unwrap();
        (d, g, (0..n).collect())
    }

    #[test]
    fn synthetic_points_are_convex_combinations() {
        let (d, g, train) = setup(50, 12);
        let r = smote_oversample(&d, &g, &train, &SmoteConfig::default(), 3).unwrap();
        assert_eq!(r.synthetic.len(), 40 - 12);
        for (s, sample) in r.synthetic.iter().enumerate() {
            assert!((0.0..1.0).contains(&sample.u));
            assert_eq!(d.labels[sample.base], 1);
            assert_eq!(d.labels[sample.neighbor], 1);
            assert_ne!(sample.base, sample.neighbor);
            let row = r.features.row(r.n_real() + s);
            for (c, &v) in row.iter().enumerate() {
                let a = d.features.get(sample.base, c);
                let b = d.features.get(sample.neighbor, c);
                assert_eq!(v, a + sample.u * (b - a));
                assert!(v >= a.min(b) && v <= a.max(b));
            }
        }
    }

    #[test]
    fn ratio_reaches_scale() {
        let (d, g, train) = setup(77, 20);
        let r = smote_oversample(&d, &g, &train, &SmoteConfig::default(), 0).unwrap();
        let minority = r.train.iter().filter(|&&i| r.labels[i] == 1).count() as f64;
        let majority = r.train.iter().filter(|&&i| r.labels[i] == 0).count() as f64;
        assert!((minority - 0.8 * majority).abs() <= 1.0);
        assert_eq!(r.graph.n_nodes(), 97 + r.synthetic.len());
        // real-real edges are preserved and synthetic nodes have neighbours
        for (i, j) in g.edges() {
            assert!(r.graph.adjacency().contains(i, j));
        }
        for s in 97..r.graph.n_nodes() {
            assert!(r.graph.adjacency().row(s).0.len() >= 5);
        }
    }

    #[test]
    fn no_samples_when_already_at_target() {
        let (d, g, train) = setup(50, 40);
        let r = smote_oversample(&d, &g, &train, &SmoteConfig::default(), 0).unwrap();
        assert!(r.synthetic.is_empty());
        assert_eq!(r.features, d.features);
    }

    #[test]
    fn too_few_minority_examples() {
        let (d, g, _) = setup(50, 5);
        let train: Vec<usize> = (0..51).collect();
        assert!(matches!(
            smote_oversample(&d, &g, &train, &SmoteConfig::default(), 0),
            Err(Error::Param(_))
        ));
    }
}
