use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Method;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
    Skipped,
}

/// Seeds derived from one experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub split: u64,
    pub meta: u64,
    pub init: u64,
    pub smote: u64,
}

/// Outcome of one (dataset, method, seed) cell, stored as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub dataset: String,
    pub method: Method,
    pub seed: u64,
    pub status: CellStatus,
    pub test: Option<MetricReport>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
    pub seeds: SeedSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    /// Sorts before summing so the result does not depend on input order.
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        sq.sort_by(f64::total_cmp);
        let std = if v.len() == 1 { 0.0 } else { (sq.iter().sum::<f64>() / n).sqrt() };
        Self { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowMetrics {
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub auc_roc: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub dataset: String,
    pub method: Method,
    pub status: CellStatus,
    /// Seeds that produced metrics.
    pub n_seeds: usize,
    pub n_failed: usize,
    pub metrics: Option<RowMetrics>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "txt" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

impl ResultTable {
    /// Aggregates cells per (dataset, method); rows are ordered by dataset
    /// name, then method.
    pub fn from_cells(cells: &[CellRecord]) -> Self {
        let mut groups: BTreeMap<(&str, Method), Vec<&CellRecord>> = BTreeMap::new();
        for c in cells {
            groups.entry((c.dataset.as_str(), c.method)).or_default().push(c);
        }
        let rows = groups
            .into_iter()
            .map(|((dataset, method), cells)| {
                let ok: Vec<&MetricReport> = cells
                    .iter()
                    .filter(|c| c.status == CellStatus::Ok)
                    .filter_map(|c| c.test.as_ref())
                    .collect();
                let n_failed = cells.iter().filter(|c| c.status == CellStatus::Failed).count();
                let status = if cells.iter().all(|c| c.status == CellStatus::Skipped) {
                    CellStatus::Skipped
                } else if ok.is_empty() {
                    CellStatus::Failed
                } else {
                    CellStatus::Ok
                };
                let column = |f: fn(&MetricReport) -> f64| MeanStd::of(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
                let metrics = (!ok.is_empty()).then(|| RowMetrics {
                    accuracy: column(|m| m.accuracy),
                    macro_f1: column(|m| m.macro_f1),
                    auc_roc: column(|m| m.auc_roc),
                });
                TableRow {
                    dataset: dataset.to_string(),
                    method,
                    status,
                    n_seeds: ok.len(),
                    n_failed,
                    metrics,
                }
            })
            .collect();
        Self { rows }
    }

    pub fn row(&self, dataset: &str, method: Method) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.dataset == dataset && r.method == method)
    }

    pub fn datasets(&self) -> Vec<&str> {
        let mut d: Vec<&str> = self.rows.iter().map(|r| r.dataset.as_str()).collect();
        d.dedup();
        d
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        if self.rows.is_empty() {
            return Err(Error::Param("result table is empty".into()));
        }
        Ok(match format {
            ReportFormat::Text => self.to_text(),
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => serde_json::to_string_pretty(self)? + "\n",
        })
    }

    /// Methods as rows, one Accuracy / Macro F1 / AUC-ROC column group per
    /// dataset.
    pub fn to_text(&self) -> String {
        const CELL: usize = 13;
        let datasets = self.datasets();
        let mut methods: Vec<Method> = self.rows.iter().map(|r| r.method).collect();
        methods.sort();
        methods.dedup();
        let group = 3 * CELL + 2;
        let mut s = String::new();
        let _ = write!(s, "{:<14}", "Method");
        for d in &datasets {
            let _ = write!(s, "| {:<group$}", d);
        }
        s.push('\n');
        let _ = write!(s, "{:<14}", "");
        for _ in &datasets {
            let _ = write!(s, "| {:<CELL$} {:<CELL$} {:<CELL$}", "Accuracy", "Macro F1", "AUC-ROC");
        }
        s.push('\n');
        s.push_str(&"-".repeat(14 + datasets.len() * (group + 2)));
        s.push('\n');
        for m in methods {
            let _ = write!(s, "{:<14}", m.display_name());
            for d in &datasets {
                let cell = match self.row(d, m) {
                    Some(TableRow { metrics: Some(x), .. }) => format!(
                        "{:<CELL$} {:<CELL$} {:<CELL$}",
                        x.accuracy.to_string(),
                        x.macro_f1.to_string(),
                        x.auc_roc.to_string()
                    ),
                    Some(TableRow { status: CellStatus::Skipped, .. }) => "skipped (external)".into(),
                    Some(_) => "failed".into(),
                    None => "-".into(),
                };
                let _ = write!(s, "| {:<group$}", cell);
            }
            s.truncate(s.trim_end().len());
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "dataset,method,status,n_seeds,n_failed,accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std,auc_mean,auc_std\n",
        );
        for r in &self.rows {
            let status = match r.status {
                CellStatus::Ok => "ok",
                CellStatus::Failed => "failed",
                CellStatus::Skipped => "skipped",
            };
            let _ = write!(s, "{},{},{},{},{}", r.dataset, r.method.key(), status, r.n_seeds, r.n_failed);
            match &r.metrics {
                Some(m) => {
                    for v in [m.accuracy, m.macro_f1, m.auc_roc] {
                        let _ = write!(s, ",{},{}", v.mean, v.std);
                    }
                }
                None => s.push_str(",,,,,,"),
            }
            s.push('\n');
        }
        s
    }

    /// Writes `table.txt`, `table.csv` and `table.json` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        for (format, ext) in [(ReportFormat::Text, "txt"), (ReportFormat::Csv, "csv"), (ReportFormat::Json, "json")] {
            let path = dir.join(format!("table.{ext}"));
            std::fs::write(&path, self.render(format)?).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Every `<dir>/<dataset>/<method>/seed<k>/metrics.json`, ordered by
/// dataset, method and seed.
pub fn collect_cells(dir: &Path) -> Result<Vec<CellRecord>> {
    let mut paths: Vec<PathBuf> = Vec::new();
    for dataset in read_dirs(dir)? {
        for method in read_dirs(&dataset)? {
            for seed in read_dirs(&method)? {
                let p = seed.join("metrics.json");
                if p.is_file() {
                    paths.push(p);
                }
            }
        }
    }
    let mut cells = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<CellRecord>(&text).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    cells.sort_by(|a, b| (&a.dataset, a.method, a.seed).cmp(&(&b.dataset, b.method, b.seed)));
    Ok(cells)
}

fn read_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
