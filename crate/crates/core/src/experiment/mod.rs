//! Multi-seed experiment harness: every method on every seed, per-cell
//! artifacts, and an aggregated result table.

mod config;
mod report;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{parse_sections, ExperimentConfig, Method};
pub use report::{
    collect_cells, CellRecord, CellStatus, MeanStd, ReportFormat, ResultTable, RowMetrics, SeedSet, TableRow,
};

use crate::data::{
    load_dataset, sample_meta_set, smote_oversample, split, standardize, write_manifest, MetaSet, SplitAssignment,
    TabularDataset,
};
use crate::error::{Error, Result};
use crate::graph::{knn_graph, GraphData};
use crate::model::Propagation;
use crate::trainer::{evaluate, train, MetaTask, Mode, TrainLog, TrainerConfig, TrainingTask};

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedSet {
    pub fn derive(seed: u64) -> Self {
        let stream = |k: u64| splitmix64(splitmix64(seed) ^ k);
        Self {
            split: stream(1),
            meta: stream(2),
            init: stream(3),
            smote: stream(4),
        }
    }
}

/// Everything shared by the methods of one seed.
#[derive(Debug, Clone)]
pub struct SeedContext {
    pub seed: u64,
    pub seeds: SeedSet,
    pub splits: SplitAssignment,
    /// Standardized with training-split statistics.
    pub dataset: TabularDataset,
    pub graph: GraphData,
    pub meta: MetaSet,
}

/// Split, standardize, build the graph (unless `fixed_graph` is given) and
/// sample the meta set for one seed.
pub fn prepare_seed(
    d: &TabularDataset,
    cfg: &ExperimentConfig,
    fixed_graph: Option<&GraphData>,
    seed: u64,
) -> Result<SeedContext> {
    let seeds = SeedSet::derive(seed);
    let splits = split(d, seeds.split)?;
    let dataset = standardize(d, &splits.train)?;
    let graph = match fixed_graph {
        Some(g) => g.clone(),
        None => knn_graph(&dataset.features, cfg.graph_k, cfg.metric)?,
    };
    let meta = sample_meta_set(&dataset, &splits, &graph, cfg.meta_per_class, seeds.meta)?;
    Ok(SeedContext {
        seed,
        seeds,
        splits,
        dataset,
        graph,
        meta,
    })
}

/// A trained cell before it is written to disk.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub record: CellRecord,
    pub log: Option<TrainLog>,
    pub params: Option<crate::model::GcnParams>,
    /// Extra manifest lines (`index`, `name`) beyond the four splits.
    pub manifest_extra: Vec<(usize, String)>,
}

/// Trains and tests one method on a prepared seed.
pub fn run_cell(ctx: &SeedContext, method: Method, cfg: &ExperimentConfig) -> Result<CellOutput> {
    let mut tc = TrainerConfig {
        seed: ctx.seeds.init,
        ..cfg.trainer.clone()
    };
    let d = &ctx.dataset;
    let test_labels: Vec<usize> = ctx.splits.test.iter().map(|&i| d.labels[i]).collect();
    let record = |test, best_epoch| CellRecord {
        dataset: cfg.dataset_name.clone(),
        method,
        seed: ctx.seed,
        status: CellStatus::Ok,
        test,
        best_epoch,
        error: None,
        seeds: ctx.seeds,
    };
    let task = |propagation| TrainingTask {
        x: &d.features,
        propagation,
        labels: &d.labels,
        n_classes: d.class_count,
        train: &ctx.splits.train,
        val: &ctx.splits.val,
    };
    let mut extra = Vec::new();

    let (task_owned, outcome, smote_graph);
    match method {
        Method::GraphSmoteExternal => {
            return Ok(CellOutput {
                record: CellRecord {
                    status: CellStatus::Skipped,
                    ..record(None, None)
                },
                log: None,
                params: None,
                manifest_extra: extra,
            });
        }
        Method::Smote => {
            let mut sc = cfg.smote;
            sc.graph_k = cfg.graph_k;
            sc.metric = cfg.metric;
            let aug = smote_oversample(d, &ctx.graph, &ctx.splits.train, &sc, ctx.seeds.smote)?;
            extra.extend((aug.n_real()..aug.labels.len()).map(|i| (i, "synthetic".to_string())));
            smote_graph = aug;
            tc.mode = Mode::Plain;
            let t = TrainingTask {
                x: &smote_graph.features,
                propagation: Propagation::Graph(smote_graph.graph.a_hat()),
                labels: &smote_graph.labels,
                n_classes: d.class_count,
                train: &smote_graph.train,
                val: &ctx.splits.val,
            };
            outcome = train(&t, None, &tc)?;
            task_owned = t;
        }
        Method::MetaGcn => {
            tc.mode = Mode::Meta;
            let meta = MetaTask {
                x: &ctx.meta.features,
                propagation: Propagation::Graph(ctx.meta.graph.a_hat()),
                labels: &ctx.meta.labels,
            };
            extra.extend(ctx.meta.node_indices.iter().map(|&i| (i, "meta_set".to_string())));
            let t = task(Propagation::Graph(ctx.graph.a_hat()));
            outcome = train(&t, Some(&meta), &tc)?;
            task_owned = t;
        }
        Method::Mlp | Method::Gcn | Method::GcnWeighted => {
            tc.mode = if method == Method::GcnWeighted { Mode::ClassWeighted } else { Mode::Plain };
            let t = task(if method == Method::Mlp {
                Propagation::Identity
            } else {
                Propagation::Graph(ctx.graph.a_hat())
            });
            outcome = train(&t, None, &tc)?;
            task_owned = t;
        }
    }
    let test = evaluate(&outcome.params, &task_owned, &ctx.splits.test, &test_labels, tc.output)?;
    Ok(CellOutput {
        record: record(Some(test), Some(outcome.best_epoch)),
        log: Some(outcome.log),
        params: Some(outcome.params),
        manifest_extra: extra,
    })
}

pub fn cell_dir(out: &Path, dataset: &str, method: Method, seed: u64) -> PathBuf {
    out.join(dataset).join(method.key()).join(format!("seed{seed}"))
}

fn write_cell(out: &Path, ctx: &SeedContext, cell: &CellOutput) -> Result<()> {
    let r = &cell.record;
    let dir = cell_dir(out, &r.dataset, r.method, r.seed);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let extra: Vec<(usize, &str)> = cell.manifest_extra.iter().map(|(i, s)| (*i, s.as_str())).collect();
    write_manifest(&dir.join("splits.txt"), &ctx.splits, &extra)?;
    if let Some(log) = &cell.log {
        let p = dir.join("trainlog.csv");
        std::fs::write(&p, log.to_csv()).map_err(|e| Error::io(&p, e))?;
    }
    if let Some(params) = &cell.params {
        params.save(&dir.join("params.bin"))?;
    }
    let p = dir.join("metrics.json");
    std::fs::write(&p, serde_json::to_string_pretty(r)? + "\n").map_err(|e| Error::io(&p, e))
}

fn write_failed(out: &Path, rec: &CellRecord, splits: Option<&SplitAssignment>) -> Result<()> {
    let dir = cell_dir(out, &rec.dataset, rec.method, rec.seed);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    if let Some(s) = splits {
        write_manifest(&dir.join("splits.txt"), s, &[])?;
    }
    let p = dir.join("metrics.json");
    std::fs::write(&p, serde_json::to_string_pretty(rec)? + "\n").map_err(|e| Error::io(&p, e))
}

fn failed(cfg: &ExperimentConfig, method: Method, seed: u64, e: &Error) -> CellRecord {
    log::error!("{} / {} / seed {seed}: {e}", cfg.dataset_name, method.key());
    CellRecord {
        dataset: cfg.dataset_name.clone(),
        method,
        seed,
        status: CellStatus::Failed,
        test: None,
        best_epoch: None,
        error: Some(e.to_string()),
        seeds: SeedSet::derive(seed),
    }
}

/// Runs every (method, seed) cell on an in-memory dataset and writes the
/// table for everything under the output directory. Cell failures are
/// recorded in the table; an unreadable edge list or output directory
/// aborts the run.
pub fn run_on_dataset(d: &TabularDataset, cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let out = cfg.out_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let fixed_graph = match &cfg.graph_edges {
        Some(p) => Some(GraphData::read_edge_list(p, d.n_nodes())?),
        None => None,
    };
    let cells: Vec<CellRecord> = pool.install(|| {
        let contexts: Vec<(u64, Result<SeedContext>)> = cfg
            .seeds
            .par_iter()
            .map(|&s| (s, prepare_seed(d, cfg, fixed_graph.as_ref(), s)))
            .collect();
        let jobs: Vec<(usize, Method)> = (0..contexts.len())
            .flat_map(|k| cfg.methods.iter().map(move |&m| (k, m)))
            .collect();
        jobs.par_iter()
            .map(|&(k, method)| {
                let (seed, ctx) = &contexts[k];
                let ctx = match ctx {
                    Ok(c) => c,
                    Err(e) => {
                        let rec = failed(cfg, method, *seed, e);
                        write_failed(out, &rec, None)?;
                        return Ok(rec);
                    }
                };
                log::info!("{} / {} / seed {seed}", cfg.dataset_name, method.key());
                match run_cell(ctx, method, cfg) {
                    Ok(cell) => {
                        write_cell(out, ctx, &cell)?;
                        Ok(cell.record)
                    }
                    Err(e) => {
                        let rec = failed(cfg, method, *seed, &e);
                        write_failed(out, &rec, Some(&ctx.splits))?;
                        Ok(rec)
                    }
                }
            })
            .collect::<Result<Vec<_>>>()
    })?;
    log::debug!("{} cells finished", cells.len());
    // the table covers every dataset already under `out`
    let table = report_from_dir(out)?;
    table.write_all(out)?;
    Ok(table)
}

/// Loads the configured dataset and runs the experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let d = load_dataset(&cfg.dataset_path, cfg.schema)?;
    run_on_dataset(&d, cfg)
}

/// Rebuilds the table from the `metrics.json` files under `dir`.
pub fn report_from_dir(dir: &Path) -> Result<ResultTable> {
    let cells = collect_cells(dir)?;
    if cells.is_empty() {
        return Err(Error::Data(format!("no metrics.json files under {}", dir.display())));
    }
    Ok(ResultTable::from_cells(&cells))
}
