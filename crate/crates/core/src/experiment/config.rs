//! Experiment configuration: sectioned `key = value` text, every key
//! overridable as `section.key`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Schema, SmoteConfig};
use crate::error::{Error, Result};
use crate::graph::Metric;
use crate::trainer::TrainerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mlp,
    Gcn,
    GcnWeighted,
    Smote,
    GraphSmoteExternal,
    MetaGcn,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Mlp,
        Method::Gcn,
        Method::GcnWeighted,
        Method::Smote,
        Method::GraphSmoteExternal,
        Method::MetaGcn,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Method::Mlp => "mlp",
            Method::Gcn => "gcn",
            Method::GcnWeighted => "gcn_weighted",
            Method::Smote => "smote",
            Method::GraphSmoteExternal => "graph_smote_external",
            Method::MetaGcn => "meta_gcn",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Method::Mlp => "MLP",
            Method::Gcn => "GCN",
            Method::GcnWeighted => "GCN-Weighted",
            Method::Smote => "SMOTE",
            Method::GraphSmoteExternal => "GraphSMOTE",
            Method::MetaGcn => "Meta-GCN",
        }
    }

    /// Methods evaluated by external code and only listed in reports.
    pub fn is_external(self) -> bool {
        self == Method::GraphSmoteExternal
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.key() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown method `{}`", s.trim())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset_path: PathBuf,
    pub schema: Schema,
    /// Name used in output paths; defaults to the schema's name.
    pub dataset_name: String,
    pub graph_k: usize,
    pub metric: Metric,
    /// Fixed edge list used instead of the per-seed k-NN graph.
    pub graph_edges: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub trainer: TrainerConfig,
    /// `None` balances the meta set down to the smallest class in the pool.
    pub meta_per_class: Option<usize>,
    pub smote: SmoteConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn new(dataset_path: impl Into<PathBuf>, schema: Schema) -> Self {
        Self {
            dataset_path: dataset_path.into(),
            schema,
            dataset_name: schema.default_name().to_string(),
            graph_k: 5,
            metric: Metric::Euclidean,
            graph_edges: None,
            methods: Method::ALL.to_vec(),
            trainer: TrainerConfig::default(),
            meta_per_class: None,
            smote: SmoteConfig::default(),
            seeds: (0..10).collect(),
            out_dir: PathBuf::from("results"),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.graph_k == 0 {
            return Err(Error::Config("graph.k must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("experiment.workers must be at least 1".into()));
        }
        if !(self.smote.scale > 0.0) || self.smote.k == 0 {
            return Err(Error::Config("smote.scale must be positive and smote.k ≥ 1".into()));
        }
        self.trainer.validate()
    }

    /// Parses config text, applies `overrides` (`section.key` → value) and
    /// validates. Relative dataset paths resolve against `base_dir`.
    pub fn from_text(text: &str, overrides: &[(String, String)], base_dir: &Path) -> Result<Self> {
        let mut kv = parse_sections(text)?;
        for (k, v) in overrides {
            kv.insert(canonical_key(k), v.clone());
        }
        Self::from_map(kv, base_dir)
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("{}: not found", path.display())),
            _ => Error::io(path, e),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, overrides, base)
    }

    fn from_map(mut kv: BTreeMap<String, String>, base_dir: &Path) -> Result<Self> {
        let mut take = |key: &str| kv.remove(key);
        let path = take("dataset.path").ok_or_else(|| Error::Config("dataset.path is required".into()))?;
        let schema: Schema = take("dataset.schema")
            .ok_or_else(|| Error::Config("dataset.schema is required".into()))?
            .parse()?;
        let path = PathBuf::from(path);
        let mut cfg = ExperimentConfig::new(
            if path.is_absolute() { path } else { base_dir.join(path) },
            schema,
        );
        if let Some(v) = take("dataset.name") {
            cfg.dataset_name = v;
        }
        if let Some(v) = take("graph.k") {
            cfg.graph_k = parse_num("graph.k", &v)?;
        }
        if let Some(v) = take("graph.metric") {
            cfg.metric = v.parse()?;
        }
        if let Some(v) = take("graph.edges") {
            let p = PathBuf::from(v);
            cfg.graph_edges = Some(if p.is_absolute() { p } else { base_dir.join(p) });
        }
        let t = &mut cfg.trainer;
        if let Some(v) = take("trainer.alpha") {
            t.alpha = parse_num("trainer.alpha", &v)?;
        }
        if let Some(v) = take("trainer.eta") {
            t.eta = parse_num("trainer.eta", &v)?;
        }
        if let Some(v) = take("trainer.epochs") {
            t.epochs = parse_num("trainer.epochs", &v)?;
        }
        if let Some(v) = take("trainer.optimizer") {
            t.optimizer = v.parse()?;
        }
        if let Some(v) = take("trainer.beta1") {
            t.beta1 = parse_num("trainer.beta1", &v)?;
        }
        if let Some(v) = take("trainer.beta2") {
            t.beta2 = parse_num("trainer.beta2", &v)?;
        }
        if let Some(v) = take("trainer.adam_eps") {
            t.adam_eps = parse_num("trainer.adam_eps", &v)?;
        }
        if let Some(v) = take("trainer.output") {
            t.output = v.parse()?;
        }
        if let Some(v) = take("trainer.hidden") {
            t.hidden = parse_num("trainer.hidden", &v)?;
        }
        if let Some(v) = take("meta.per_class") {
            cfg.meta_per_class = match v.as_str() {
                "auto" => None,
                n => Some(parse_num("meta.per_class", n)?),
            };
        }
        if let Some(v) = take("smote.scale") {
            cfg.smote.scale = parse_num("smote.scale", &v)?;
        }
        if let Some(v) = take("smote.k") {
            cfg.smote.k = parse_num("smote.k", &v)?;
        }
        cfg.smote.graph_k = cfg.graph_k;
        cfg.smote.metric = cfg.metric;
        if let Some(v) = take("experiment.methods") {
            cfg.methods = v
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(str::parse)
                .collect::<Result<_>>()?;
        }
        if let Some(v) = take("experiment.seeds") {
            let n: u64 = parse_num("experiment.seeds", &v)?;
            cfg.seeds = (0..n).collect();
        }
        if let Some(v) = take("experiment.out") {
            cfg.out_dir = PathBuf::from(v);
        }
        if let Some(v) = take("experiment.workers") {
            cfg.workers = parse_num("experiment.workers", &v)?;
        }
        if let Some(k) = kv.keys().next() {
            return Err(Error::Config(format!("unknown config key `{k}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

/// Short command-line spellings for common keys.
fn canonical_key(k: &str) -> String {
    match k {
        "seeds" => "experiment.seeds".into(),
        "out" => "experiment.out".into(),
        "methods" => "experiment.methods".into(),
        "workers" => "experiment.workers".into(),
        other => other.to_string(),
    }
}

/// `[section]` headers and `key = value` lines into `section.key` entries.
/// `#` and `;` start comments.
pub fn parse_sections(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let key = if section.is_empty() {
            canonical_key(k.trim())
        } else {
            format!("{section}.{}", k.trim())
        };
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# comment
[dataset]
path = data/haberman.data
schema = haberman

[trainer]
eta = 2.5   ; inline comment
optimizer = adam

[experiment]
methods = gcn, meta_gcn
seeds = 3
";

    #[test]
    fn parses_sections_and_overrides() {
        let cfg = ExperimentConfig::from_text(
            SAMPLE,
            &[("trainer.eta".into(), "0.5".into()), ("out".into(), "/tmp/x".into())],
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.dataset_path, PathBuf::from("/base/data/haberman.data"));
        assert_eq!(cfg.trainer.eta, 0.5);
        assert_eq!(cfg.trainer.optimizer, crate::trainer::OptimizerKind::Adam);
        assert_eq!(cfg.methods, vec![Method::Gcn, Method::MetaGcn]);
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let base = Path::new(".");
        let bad = ExperimentConfig::from_text(SAMPLE, &[("trainer.nope".into(), "1".into())], base);
        assert!(matches!(bad, Err(Error::Config(_))));
        let bad = ExperimentConfig::from_text(SAMPLE, &[("seeds".into(), "0".into())], base);
        assert!(matches!(bad, Err(Error::Config(_))));
        let bad = ExperimentConfig::from_text(SAMPLE, &[("methods".into(), "gcn,svm".into())], base);
        assert!(bad.is_err());
        assert!(ExperimentConfig::from_text("[dataset]\nschema = haberman\n", &[], base).is_err());
        assert!(parse_sections("[a]\nx = 1\nx = 2\n").is_err());
        assert!(parse_sections("no equals sign\n").is_err());
    }

    #[test]
    fn method_keys_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.key().parse::<Method>().unwrap(), m);
        }
    }
}
