//! Tabular datasets: ingestion, standardization, splitting, meta-set
//! sampling and SMOTE oversampling.

mod meta;
mod smote;
mod split;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub use meta::{sample_meta_set, MetaSet};
pub use smote::{smote_oversample, SmoteConfig, SmoteResult, SyntheticSample};
pub use split::{read_manifest, split, write_manifest, SplitAssignment, SplitName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    /// 3 numeric features, survival status 1 (≥ 5 years) or 2 (died).
    Haberman,
    /// 8 numeric features, 0/1 outcome.
    PimaDiabetes,
    /// Numeric features, label in the last column, optional header row.
    GenericCsv,
}

impl std::str::FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "haberman" => Ok(Schema::Haberman),
            "pima_diabetes" | "pima" | "diabetes" => Ok(Schema::PimaDiabetes),
            "generic_csv" | "generic" => Ok(Schema::GenericCsv),
            other => Err(Error::Config(format!("unknown dataset schema `{other}`"))),
        }
    }
}

impl Schema {
    fn expected_columns(self) -> Option<usize> {
        match self {
            Schema::Haberman => Some(4),
            Schema::PimaDiabetes => Some(9),
            Schema::GenericCsv => None,
        }
    }

    /// Short dataset name used in output paths and reports.
    pub fn default_name(self) -> &'static str {
        match self {
            Schema::Haberman => "haberman",
            Schema::PimaDiabetes => "diabetes",
            Schema::GenericCsv => "dataset",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub name: String,
    pub features: DenseMatrix,
    /// Values in `0..class_count`; class 1 is the minority for binary data.
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl TabularDataset {
    pub fn new(name: impl Into<String>, features: DenseMatrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape("TabularDataset", features.shape(), (labels.len(), 1)));
        }
        if !features.is_finite() {
            return Err(Error::Data("non-finite feature values".into()));
        }
        let class_count = labels.iter().max().map_or(0, |&m| m + 1);
        Ok(Self {
            name: name.into(),
            features,
            labels,
            class_count,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn minority_fraction(&self) -> f64 {
        let counts = self.class_counts();
        *counts.iter().min().unwrap_or(&0) as f64 / self.n_nodes() as f64
    }
}

/// Reads a comma-separated file under `schema`. Rows that fail to parse are
/// rejected with their 1-based line number.
pub fn load_dataset(path: &Path, schema: Schema) -> Result<TabularDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut width = schema.expected_columns();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        match width {
            Some(w) if fields.len() != w => {
                return Err(parse_err(line_no, format!("expected {w} fields, found {}", fields.len())));
            }
            None => width = Some(fields.len()),
            _ => {}
        }
        if fields.len() < 2 {
            return Err(parse_err(line_no, "need at least one feature and a label".into()));
        }
        let (feat, label) = fields.split_at(fields.len() - 1);
        let parsed: std::result::Result<Vec<f64>, _> = feat.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if schema == Schema::GenericCsv && rows.is_empty() && raw_labels.is_empty() => {
                // header row
                continue;
            }
            Err(e) => return Err(parse_err(line_no, format!("unparseable feature: {e}"))),
        };
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(parse_err(line_no, format!("non-finite value in column {}", bad + 1)));
        }
        let label = label[0].to_string();
        match schema {
            Schema::Haberman if label != "1" && label != "2" => {
                return Err(parse_err(line_no, format!("survival status must be 1 or 2, got `{label}`")));
            }
            Schema::PimaDiabetes if label != "0" && label != "1" => {
                return Err(parse_err(line_no, format!("outcome must be 0 or 1, got `{label}`")));
            }
            _ => {}
        }
        rows.push(values);
        raw_labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }

    let labels = match schema {
        Schema::Haberman => raw_labels.iter().map(|l| usize::from(l == "2")).collect(),
        Schema::PimaDiabetes => raw_labels.iter().map(|l| usize::from(l == "1")).collect(),
        Schema::GenericCsv => remap_by_frequency(&raw_labels),
    };
    let features = DenseMatrix::from_rows(&rows)?;
    let name = match schema {
        Schema::GenericCsv => path
            .file_stem()
            .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned()),
        other => other.default_name().to_string(),
    };
    let d = TabularDataset::new(name, features, labels)?;
    if d.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Data(format!("{}: only one class present", path.display())));
    }
    Ok(d)
}

/// Majority class → 0, the rest by descending frequency (ties by label
/// text), so binary data has class 1 as the minority.
fn remap_by_frequency(raw: &[String]) -> Vec<usize> {
    let mut counts: Vec<(String, usize)> = Vec::new();
    for l in raw {
        match counts.iter_mut().find(|(k, _)| k == l) {
            Some((_, c)) => *c += 1,
            None => counts.push((l.clone(), 1)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    raw.iter()
        .map(|l| counts.iter().position(|(k, _)| k == l).expect("counted"))
        .collect()
}

/// Z-scores every column with mean and population standard deviation taken
/// over `fit_indices` only. Constant columns map to zero.
pub fn standardize(d: &TabularDataset, fit_indices: &[usize]) -> Result<TabularDataset> {
    if fit_indices.is_empty() {
        return Err(Error::Param("standardize needs at least one fit row".into()));
    }
    if let Some(&i) = fit_indices.iter().find(|&&i| i >= d.n_nodes()) {
        return Err(Error::Param(format!("fit index {i} out of range")));
    }
    let n = fit_indices.len() as f64;
    let cols = d.n_features();
    let mut mean = vec![0.0; cols];
    for &i in fit_indices {
        for (m, v) in mean.iter_mut().zip(d.features.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; cols];
    for &i in fit_indices {
        for ((s, v), m) in var.iter_mut().zip(d.features.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
    let features = DenseMatrix::from_fn(d.n_nodes(), cols, |i, j| {
        if std[j] > 0.0 {
            (d.features.get(i, j) - mean[j]) / std[j]
        } else {
            0.0
        }
    });
    Ok(TabularDataset {
        features,
        ..d.clone()
    })
}
