//! One grid cell end to end, and the full confounder x p x seed sweep.

use rayon::prelude::*;

use super::config::SweepConfig;
use super::report::{summarize, EvalReport, EvalRow};
use crate::error::{Error, Result};
use crate::explain::{AttributionMap, ExplainContext, Method};
use crate::image::ImageGrid;
use crate::metrics::{build_flip_pool, confounder_sensitivity, explanation_ncc, FlipPool};
use crate::nnlite::{auc_on, train, TrainConfig, TrainedClassifier};
use crate::rng::{derive_seed, SeedPart};
use crate::synthgen::{build_dataset, confounded_pairs, ConfounderKind, DatasetSpec, SplitDataset};

/// Seed of one component of one cell: `hash(seed, confounder, p, tag)`.
pub fn cell_seed(seed: u64, confounder: &ConfounderKind, p: u32, component: &'static str) -> u64 {
    derive_seed(
        seed,
        &[
            SeedPart::Tag(confounder.name()),
            SeedPart::Int(u64::from(p)),
            SeedPart::Tag(component),
        ],
    )
}

/// Images and maps for the first pool pair of a cell, per explainer.
#[derive(Debug, Clone)]
pub struct Panel {
    pub explainer: Method,
    pub clean: ImageGrid,
    pub confounded: ImageGrid,
    pub map_clean: AttributionMap,
    pub map_confounded: AttributionMap,
}

#[derive(Debug, Clone)]
pub struct CellOutput {
    pub confounder: String,
    pub p: u32,
    pub seed: u64,
    pub rows: Vec<EvalRow>,
    pub panels: Vec<Panel>,
    /// Set when dataset generation or training failed.
    pub error: Option<String>,
}

impl CellOutput {
    fn empty(confounder: &ConfounderKind, p: u32, seed: u64, cfg: &SweepConfig) -> Self {
        Self {
            confounder: confounder.name().to_string(),
            p,
            seed,
            rows: Vec::with_capacity(cfg.explainers.len()),
            panels: Vec::new(),
            error: None,
        }
    }
}

struct Trained {
    model: TrainedClassifier,
    auc_conf: f64,
    auc_clean: f64,
    pool: FlipPool,
    baseline: ImageGrid,
}

fn train_cell(confounder: &ConfounderKind, p: u32, seed: u64, cfg: &SweepConfig) -> Result<Trained> {
    let spec = DatasetSpec {
        n_train: cfg.n_train,
        n_val: cfg.n_val,
        n_test: cfg.n_test,
        image_size: cfg.image_size,
        p,
        confounder: confounder.clone(),
        seed: cell_seed(seed, confounder, p, "data"),
        ..DatasetSpec::default()
    };
    let ds = build_dataset(&spec)?;
    let train_cfg = TrainConfig {
        seed: cell_seed(seed, confounder, p, "model"),
        ..cfg.train.clone()
    };
    let model = train(cfg.model_spec(), &ds, &train_cfg)?;
    assess(model, &ds, confounder, cell_seed(seed, confounder, p, "pairs"), cfg)
}

fn assess(
    model: TrainedClassifier,
    ds: &SplitDataset,
    confounder: &ConfounderKind,
    pairs_seed: u64,
    cfg: &SweepConfig,
) -> Result<Trained> {
    let auc_conf = auc_on(&model, &ds.test)?;
    let auc_clean = auc_on(&model, &ds.clean_test)?;
    let pairs = confounded_pairs(&ds.test, confounder, pairs_seed)?;
    let pool = build_flip_pool(&model, &pairs, &cfg.metric)?;
    Ok(Trained {
        model,
        auc_conf,
        auc_clean,
        pool,
        baseline: ds.train_mean()?,
    })
}

struct Scores {
    cs: Option<f64>,
    ncc: Option<f64>,
    panel: Option<Panel>,
}

fn explain_pool(method: Method, t: &Trained, explain_seed: u64, cfg: &SweepConfig) -> Result<Scores> {
    let maps = t
        .pool
        .pairs
        .par_iter()
        .map(|pair| {
            // both maps of a pair share LIME masks
            let mut ctx = ExplainContext::new(t.baseline.clone());
            ctx.segments_per_side = cfg.segments_per_side;
            ctx.shap = cfg.shap.clone();
            ctx.lime = cfg.lime.clone();
            ctx.lime.seed = derive_seed(
                explain_seed,
                &[SeedPart::Tag(method.name()), SeedPart::from(pair.index)],
            );
            let conf = ctx.explain(method, &t.model, &pair.confounded)?;
            let clean = ctx.explain(method, &t.model, &pair.clean)?;
            Ok((conf, clean))
        })
        .collect::<Result<Vec<_>>>()?;
    let cs_items: Vec<_> = maps
        .iter()
        .zip(&t.pool.pairs)
        .map(|((c, _), pair)| (c, &pair.mask))
        .collect();
    let cs = confounder_sensitivity(&cs_items, &cfg.metric)?;
    let ncc_items: Vec<_> = maps.iter().map(|(c, k)| (c, k)).collect();
    let ncc = explanation_ncc(&ncc_items)?;
    let panel = t
        .pool
        .pairs
        .first()
        .zip(maps.into_iter().next())
        .map(|(pair, (conf, clean))| Panel {
            explainer: method,
            clean: pair.clean.clone(),
            confounded: pair.confounded.clone(),
            map_clean: clean,
            map_confounded: conf,
        });
    Ok(Scores {
        cs: cs.value,
        ncc: ncc.value,
        panel,
    })
}

/// Runs one (confounder, p, seed) cell. Failures are recorded in the rows,
/// never propagated.
pub fn run_cell(confounder: &ConfounderKind, p: u32, seed: u64, cfg: &SweepConfig) -> CellOutput {
    let out = CellOutput::empty(confounder, p, seed, cfg);
    finish_cell(out, train_cell(confounder, p, seed, cfg), confounder, cfg)
}

/// Scores an existing model and dataset as the cell (confounder, p, seed)
/// would, with the same derived pair and explainer seeds.
pub fn evaluate_artifacts(
    model: TrainedClassifier,
    ds: &SplitDataset,
    confounder: &ConfounderKind,
    p: u32,
    seed: u64,
    cfg: &SweepConfig,
) -> CellOutput {
    let out = CellOutput::empty(confounder, p, seed, cfg);
    let trained = assess(model, ds, confounder, cell_seed(seed, confounder, p, "pairs"), cfg);
    finish_cell(out, trained, confounder, cfg)
}

fn finish_cell(
    mut out: CellOutput,
    trained: Result<Trained>,
    confounder: &ConfounderKind,
    cfg: &SweepConfig,
) -> CellOutput {
    let (name, p, seed) = (out.confounder.clone(), out.p, out.seed);
    let cell_id = format!("{name}/p{p}/s{seed}");
    let trained = match trained {
        Ok(t) => t,
        Err(e) => {
            let msg = cell_error(&cell_id, e);
            out.rows = cfg
                .explainers
                .iter()
                .map(|&m| EvalRow::failed(&name, p, seed, m, msg.clone()))
                .collect();
            out.error = Some(msg);
            return out;
        }
    };
    let explain_seed = cell_seed(seed, confounder, p, "explain");
    let pool = &trained.pool;
    for &method in &cfg.explainers {
        let mut row = EvalRow {
            confounder: name.clone(),
            p,
            seed,
            explainer: method,
            auc_conf: trained.auc_conf,
            auc_clean: trained.auc_clean,
            cs: None,
            cs_pool: pool.pairs.len(),
            cs_fallback: pool.fallback_used,
            ncc: None,
            ncc_pool: pool.pairs.len(),
            ncc_fallback: pool.fallback_used,
            error: None,
        };
        match explain_pool(method, &trained, explain_seed, cfg) {
            Ok(s) => {
                row.cs = s.cs;
                row.ncc = s.ncc;
                out.panels.extend(s.panel);
            }
            Err(e) => row.error = Some(cell_error(&format!("{cell_id}/{}", method.name()), e)),
        }
        out.rows.push(row);
    }
    out
}

fn cell_error(cell: &str, e: Error) -> String {
    Error::Cell {
        cell: cell.to_string(),
        source: Box::new(e),
    }
    .to_string()
}

/// Every cell of the grid, in report order.
pub fn cells(cfg: &SweepConfig) -> Vec<(ConfounderKind, u32, u64)> {
    let mut out = Vec::new();
    for c in &cfg.confounders {
        for &p in &cfg.p_grid {
            for &s in &cfg.seeds {
                out.push((c.clone(), p, s));
            }
        }
    }
    out
}

/// Runs all cells (in parallel) and assembles the report in grid order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<(EvalReport, Vec<CellOutput>)> {
    cfg.validate()?;
    let outputs: Vec<CellOutput> = cells(cfg)
        .par_iter()
        .map(|(c, p, s)| run_cell(c, *p, *s, cfg))
        .collect();
    if outputs.iter().all(|o| o.error.is_some()) {
        let first = outputs.first().and_then(|o| o.error.clone()).unwrap_or_default();
        return Err(Error::Sweep(format!(
            "all {} cells failed; first: {first}",
            outputs.len()
        )));
    }
    let rows: Vec<EvalRow> = outputs.iter().flat_map(|o| o.rows.iter().cloned()).collect();
    let summary = summarize(&rows);
    Ok((EvalReport { rows, summary }, outputs))
}
