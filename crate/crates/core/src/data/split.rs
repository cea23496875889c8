use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TabularDataset;
use crate::error::{Error, Result};

/// Train / validation / test / meta-pool fractions.
pub const SPLIT_FRACTIONS: [f64; 4] = [0.6, 0.1, 0.2, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
    MetaPool,
}

impl SplitName {
    pub const ALL: [SplitName; 4] = [SplitName::Train, SplitName::Val, SplitName::Test, SplitName::MetaPool];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
            SplitName::MetaPool => "meta_pool",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown split name `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub meta_pool: Vec<usize>,
}

impl SplitAssignment {
    pub fn get(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
            SplitName::MetaPool => &self.meta_pool,
        }
    }

    fn get_mut(&mut self, name: SplitName) -> &mut Vec<usize> {
        match name {
            SplitName::Train => &mut self.train,
            SplitName::Val => &mut self.val,
            SplitName::Test => &mut self.test,
            SplitName::MetaPool => &mut self.meta_pool,
        }
    }

    pub fn n_nodes(&self) -> usize {
        SplitName::ALL.iter().map(|&s| self.get(s).len()).sum()
    }

    /// Split of each node, `None` for nodes not covered.
    pub fn labels_by_node(&self, n: usize) -> Vec<Option<SplitName>> {
        let mut out = vec![None; n];
        for s in SplitName::ALL {
            for &i in self.get(s) {
                if i < n {
                    out[i] = Some(s);
                }
            }
        }
        out
    }
}

/// Per-class quotas: every class gets `floor(n_c·f_s)` per split, and the
/// leftover examples go to the splits furthest below their global target so
/// both per-class and overall sizes stay within one example of exact.
fn quotas(class_sizes: &[usize]) -> Vec<[usize; 4]> {
    let n: usize = class_sizes.iter().sum();
    let global = largest_remainder(n);
    let mut out: Vec<[usize; 4]> = class_sizes
        .iter()
        .map(|&nc| {
            let mut q = [0; 4];
            for (s, f) in SPLIT_FRACTIONS.iter().enumerate() {
                q[s] = (nc as f64 * f).floor() as usize;
            }
            q
        })
        .collect();
    let mut deficit: Vec<i64> = (0..4)
        .map(|s| global[s] as i64 - out.iter().map(|q| q[s] as i64).sum::<i64>())
        .collect();
    for (c, &nc) in class_sizes.iter().enumerate() {
        let leftover = nc - out[c].iter().sum::<usize>();
        let mut order: Vec<usize> = (0..4).collect();
        // fractional part breaks ties between equal deficits
        let frac = |s: usize| nc as f64 * SPLIT_FRACTIONS[s] - out[c][s] as f64;
        order.sort_by(|&a, &b| {
            deficit[b]
                .cmp(&deficit[a])
                .then(frac(b).total_cmp(&frac(a)))
                .then(a.cmp(&b))
        });
        for &s in order.iter().take(leftover) {
            out[c][s] += 1;
            deficit[s] -= 1;
        }
    }
    out
}

fn largest_remainder(n: usize) -> [usize; 4] {
    let mut q = [0usize; 4];
    let mut rem: Vec<(f64, usize)> = Vec::new();
    for (s, f) in SPLIT_FRACTIONS.iter().enumerate() {
        let exact = n as f64 * f;
        q[s] = exact.floor() as usize;
        rem.push((exact - q[s] as f64, s));
    }
    rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let left = n - q.iter().sum::<usize>();
    for &(_, s) in rem.iter().take(left) {
        q[s] += 1;
    }
    q
}

/// Stratified 60/10/20/10 shuffle-split, deterministic per seed. Each split's
/// index list is sorted.
pub fn split(d: &TabularDataset, seed: u64) -> Result<SplitAssignment> {
    let counts = d.class_counts();
    for (c, &nc) in counts.iter().enumerate() {
        if nc < 10 {
            return Err(Error::Param(format!(
                "class {c} has {nc} examples; at least 10 are needed to stratify"
            )));
        }
    }
    let quotas = quotas(&counts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitAssignment {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        meta_pool: Vec::new(),
    };
    for (c, q) in quotas.iter().enumerate() {
        let mut members: Vec<usize> = (0..d.n_nodes()).filter(|&i| d.labels[i] == c).collect();
        members.shuffle(&mut rng);
        let mut start = 0;
        for (s, &take) in SplitName::ALL.iter().zip(q) {
            out.get_mut(*s).extend_from_slice(&members[start..start + take]);
            start += take;
        }
    }
    for s in SplitName::ALL {
        out.get_mut(s).sort_unstable();
    }
    for s in [SplitName::Train, SplitName::MetaPool] {
        let present = |c: usize| out.get(s).iter().any(|&i| d.labels[i] == c);
        if let Some(c) = (0..d.class_count).find(|&c| !present(c)) {
            return Err(Error::Param(format!("class {c} missing from {s} split")));
        }
    }
    Ok(out)
}

/// One `index,split` line per node, in node order.
pub fn write_manifest(path: &Path, splits: &SplitAssignment, extra: &[(usize, &str)]) -> Result<()> {
    let n = splits.n_nodes();
    let mut s = String::new();
    for (i, name) in splits.labels_by_node(n).into_iter().enumerate() {
        let name = name.map_or("unassigned", SplitName::as_str);
        s.push_str(&format!("{i},{name}\n"));
    }
    for (i, name) in extra {
        s.push_str(&format!("{i},{name}\n"));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a manifest written by [`write_manifest`]; lines with split names
/// other than the four standard ones are ignored.
pub fn read_manifest(path: &Path) -> Result<SplitAssignment> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = SplitAssignment {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        meta_pool: Vec::new(),
    };
    for (k, line) in text.lines().enumerate() {
        let parse_err = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            msg: msg.to_string(),
        };
        let (idx, name) = line.split_once(',').ok_or_else(|| parse_err("expected `index,split`"))?;
        let idx: usize = idx.trim().parse().map_err(|_| parse_err("bad index"))?;
        if let Ok(name) = name.trim().parse::<SplitName>() {
            out.get_mut(name).push(idx);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use proptest::prelude::*;

    fn dataset(counts: &[usize]) -> TabularDataset {
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat(c).take(n))
            .collect();
        TabularDataset::new("t", DenseMatrix::zeros(labels.len(), 1), labels).unwrap()
    }

    #[test]
    fn balanced_hundred_exact_sizes() {
        let s = split(&dataset(&[50, 50]), 0).unwrap();
        assert_eq!(
            [s.train.len(), s.val.len(), s.test.len(), s.meta_pool.len()],
            [60, 10, 20, 10]
        );
    }

    #[test]
    fn same_seed_same_split() {
        let d = dataset(&[225, 81]);
        assert_eq!(split(&d, 7).unwrap(), split(&d, 7).unwrap());
        assert_ne!(split(&d, 7).unwrap(), split(&d, 8).unwrap());
    }

    #[test]
    fn tiny_class_rejected() {
        assert!(matches!(split(&dataset(&[50, 9]), 0), Err(Error::Param(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let d = dataset(&[30, 20]);
        let s = split(&d, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("splits.txt");
        write_manifest(&p, &s, &[(50, "synthetic")]).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), s);
    }

    proptest! {
        #[test]
        fn split_is_partition_with_stratified_sizes(
            c0 in 10usize..300, c1 in 10usize..120, c2 in prop::option::of(10usize..60), seed in any::<u64>()
        ) {
            let mut counts = vec![c0, c1];
            counts.extend(c2);
            let d = dataset(&counts);
            let s = split(&d, seed).unwrap();
            let n = d.n_nodes();

            let mut seen = vec![0u8; n];
            for name in SplitName::ALL {
                for &i in s.get(name) {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&v| v == 1));

            for (name, f) in SplitName::ALL.iter().zip(SPLIT_FRACTIONS) {
                let size = s.get(*name).len() as f64;
                prop_assert!((size - n as f64 * f).abs() <= 1.0, "{} size {} vs {}", name, size, n as f64 * f);
                for (c, &nc) in counts.iter().enumerate() {
                    let got = s.get(*name).iter().filter(|&&i| d.labels[i] == c).count() as f64;
                    prop_assert!((got - nc as f64 * f).abs() <= 1.0, "class {} in {}: {} vs {}", c, name, got, nc as f64 * f);
                }
            }
        }
    }
}
