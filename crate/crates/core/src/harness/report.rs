//! Report rows, trend summaries, CSV emission/parsing and heatmap panels.

use std::fmt::Write as _;
use std::path::Path;

use super::sweep::CellOutput;
use crate::error::{Error, Result};
use crate::explain::Method;
use crate::metrics::pearson;

pub const CSV_HEADER: &str =
    "confounder,p,seed,explainer,auc_conf,auc_clean,cs,cs_pool,cs_fallback,ncc,ncc_pool,ncc_fallback";

/// One (confounder, p, seed, explainer) result. Undefined values are `None`
/// (metrics) or NaN (AUCs of failed cells).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub confounder: String,
    pub p: u32,
    pub seed: u64,
    pub explainer: Method,
    pub auc_conf: f64,
    pub auc_clean: f64,
    pub cs: Option<f64>,
    pub cs_pool: usize,
    pub cs_fallback: bool,
    pub ncc: Option<f64>,
    pub ncc_pool: usize,
    pub ncc_fallback: bool,
    /// Not serialized; a failed row shows as NaN fields in the CSV.
    pub error: Option<String>,
}

impl EvalRow {
    pub fn failed(confounder: &str, p: u32, seed: u64, explainer: Method, error: String) -> Self {
        Self {
            confounder: confounder.to_string(),
            p,
            seed,
            explainer,
            auc_conf: f64::NAN,
            auc_clean: f64::NAN,
            cs: None,
            cs_pool: 0,
            cs_fallback: false,
            ncc: None,
            ncc_pool: 0,
            ncc_fallback: false,
            error: Some(error),
        }
    }
}

/// Pearson correlation of a seed-averaged metric against p.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    /// `None` when fewer than two p values remain or a series is constant.
    pub r: Option<f64>,
    /// The p values used, with their seed-averaged metric.
    pub points: Vec<(u32, f64)>,
    /// No non-fallback cell existed, so fallback cells were used.
    pub from_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrEntry {
    pub confounder: String,
    pub explainer: Method,
    pub cs: Correlation,
    pub ncc: Correlation,
}

/// Seed-averaged AUCs for one (confounder, p).
#[derive(Debug, Clone, PartialEq)]
pub struct AucPoint {
    pub confounder: String,
    pub p: u32,
    pub auc_conf: f64,
    pub auc_clean: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub correlations: Vec<CorrEntry>,
    pub auc: Vec<AucPoint>,
}

impl Summary {
    pub fn correlation(&self, confounder: &str, explainer: Method) -> Option<&CorrEntry> {
        self.correlations
            .iter()
            .find(|e| e.confounder == confounder && e.explainer == explainer)
    }

    pub fn auc_series(&self, confounder: &str) -> Vec<&AucPoint> {
        self.auc.iter().filter(|a| a.confounder == confounder).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: Summary,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let summary = summarize(&rows);
        Self { rows, summary }
    }
}

fn distinct<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn correlate(rows: &[&EvalRow], metric: impl Fn(&EvalRow) -> Option<(f64, bool)>) -> Correlation {
    let defined: Vec<(u32, f64, bool)> = rows
        .iter()
        .filter_map(|r| metric(r).map(|(v, fb)| (r.p, v, fb)))
        .collect();
    let any_real = defined.iter().any(|d| !d.2);
    let used: Vec<(u32, f64)> = defined
        .iter()
        .filter(|d| !any_real || !d.2)
        .map(|d| (d.0, d.1))
        .collect();
    let points: Vec<(u32, f64)> = distinct(used.iter().map(|u| u.0))
        .into_iter()
        .map(|p| {
            let vals: Vec<f64> = used.iter().filter(|u| u.0 == p).map(|u| u.1).collect();
            (p, mean(&vals))
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| f64::from(p.0)).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    Correlation {
        r: pearson(&xs, &ys).ok(),
        points,
        from_fallback: !defined.is_empty() && !any_real,
    }
}

/// Per-(confounder, explainer) correlations over non-fallback cells (all
/// cells when none is non-fallback) and per-(confounder, p) mean AUCs.
pub fn summarize(rows: &[EvalRow]) -> Summary {
    let ok: Vec<&EvalRow> = rows
        .iter()
        .filter(|r| r.error.is_none() || r.auc_conf.is_finite())
        .collect();
    let confounders = distinct(rows.iter().map(|r| r.confounder.clone()));
    let explainers = distinct(rows.iter().map(|r| r.explainer));
    let mut correlations = Vec::new();
    for c in &confounders {
        for &e in &explainers {
            let sel: Vec<&EvalRow> = ok
                .iter()
                .copied()
                .filter(|r| &r.confounder == c && r.explainer == e)
                .collect();
            correlations.push(CorrEntry {
                confounder: c.clone(),
                explainer: e,
                cs: correlate(&sel, |r| r.cs.map(|v| (v, r.cs_fallback))),
                ncc: correlate(&sel, |r| r.ncc.map(|v| (v, r.ncc_fallback))),
            });
        }
    }
    let mut auc = Vec::new();
    for c in &confounders {
        let sel: Vec<&EvalRow> = ok
            .iter()
            .copied()
            .filter(|r| &r.confounder == c && r.auc_conf.is_finite())
            .collect();
        for p in distinct(sel.iter().map(|r| r.p)) {
            // AUC is per cell; explainer rows repeat it
            let cells: Vec<&EvalRow> = distinct(sel.iter().filter(|r| r.p == p).map(|r| r.seed))
                .into_iter()
                .filter_map(|s| sel.iter().copied().find(|r| r.p == p && r.seed == s))
                .collect();
            let conf: Vec<f64> = cells.iter().map(|r| r.auc_conf).collect();
            let clean: Vec<f64> = cells.iter().map(|r| r.auc_clean).collect();
            auc.push(AucPoint {
                confounder: c.clone(),
                p,
                auc_conf: mean(&conf),
                auc_clean: mean(&clean),
                n_seeds: cells.len(),
            });
        }
    }
    Summary { correlations, auc }
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".into(), num)
}

/// CSV text with the fixed header; undefined values are `NaN`.
pub fn csv_string(rows: &[EvalRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.confounder,
            r.p,
            r.seed,
            r.explainer.name(),
            num(r.auc_conf),
            num(r.auc_clean),
            opt(r.cs),
            r.cs_pool,
            u8::from(r.cs_fallback),
            opt(r.ncc),
            r.ncc_pool,
            u8::from(r.ncc_fallback),
        );
    }
    s
}

pub fn emit_csv(report: &EvalReport, path: &Path) -> Result<()> {
    std::fs::write(path, csv_string(&report.rows))?;
    Ok(())
}

/// Parses a CSV written by [`emit_csv`]. Rows with NaN AUCs come back as
/// failed rows.
pub fn parse_csv(text: &str, path: &Path) -> Result<Vec<EvalRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::format(path, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::format(path, format!("line {line}: {e}")))?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bad = |what: &str| Error::format(path, format!("line {line}: bad {what} '{}'", field(col(what))));
        let f = |what: &str| field(col(what)).parse::<f64>().map_err(|_| bad(what));
        let u = |what: &str| field(col(what)).parse::<usize>().map_err(|_| bad(what));
        let flag = |what: &str| match field(col(what)) {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(bad(what)),
        };
        let defined = |v: f64| (!v.is_nan()).then_some(v);
        let auc_conf = f("auc_conf")?;
        let mut row = EvalRow {
            confounder: field(0).to_string(),
            p: field(1).parse().map_err(|_| bad("p"))?,
            seed: field(2).parse().map_err(|_| bad("seed"))?,
            explainer: field(3).parse().map_err(|_| bad("explainer"))?,
            auc_conf,
            auc_clean: f("auc_clean")?,
            cs: defined(f("cs")?),
            cs_pool: u("cs_pool")?,
            cs_fallback: flag("cs_fallback")?,
            ncc: defined(f("ncc")?),
            ncc_pool: u("ncc_pool")?,
            ncc_fallback: flag("ncc_fallback")?,
            error: None,
        };
        if auc_conf.is_nan() {
            row.error = Some("failed cell".into());
        }
        rows.push(row);
    }
    Ok(rows)
}

fn col(name: &str) -> usize {
    CSV_HEADER.split(',').position(|h| h == name).expect("known column")
}

pub fn load_csv(path: &Path) -> Result<Vec<EvalRow>> {
    parse_csv(&std::fs::read_to_string(path)?, path)
}

fn fmt_r(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".into(), |v| format!("{v:+.3}"))
}

/// Human-readable summary block.
pub fn summary_text(summary: &Summary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "AUC by confounder and p (seed means; confounded / clean test)");
    for a in &summary.auc {
        let _ = writeln!(
            s,
            "  {:<12} p={:>3}  {:.4} / {:.4}  (n={})",
            a.confounder, a.p, a.auc_conf, a.auc_clean, a.n_seeds
        );
    }
    let _ = writeln!(s, "Pearson correlation with p");
    for e in &summary.correlations {
        let tag = |c: &Correlation| if c.from_fallback { " (fallback pools)" } else { "" };
        let _ = writeln!(
            s,
            "  {:<12} {:<9} corr(CS,p)={}{}  corr(NCC,p)={}{}",
            e.confounder,
            e.explainer.name(),
            fmt_r(e.cs.r),
            tag(&e.cs),
            fmt_r(e.ncc.r),
            tag(&e.ncc)
        );
    }
    s
}

/// `confounder,explainer,corr_cs,corr_ncc,cs_points,ncc_points,cs_fallback,ncc_fallback`.
pub fn summary_csv(summary: &Summary) -> String {
    let mut s = String::from("confounder,explainer,corr_cs,corr_ncc,cs_points,ncc_points,cs_fallback,ncc_fallback\n");
    for e in &summary.correlations {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            e.confounder,
            e.explainer.name(),
            opt(e.cs.r),
            opt(e.ncc.r),
            e.cs.points.len(),
            e.ncc.points.len(),
            u8::from(e.cs.from_fallback),
            u8::from(e.ncc.from_fallback)
        );
    }
    s
}

/// Writes the four panels of every cell's first pool pair.
pub fn render_heatmaps(outputs: &[CellOutput], dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(dir)?;
    let mut written = 0;
    for o in outputs {
        for panel in &o.panels {
            let stem = format!("{}_p{}_s{}_{}", o.confounder, o.p, o.seed, panel.explainer.name());
            panel.clean.save_pgm(&dir.join(format!("{stem}_clean.pgm")))?;
            panel.confounded.save_pgm(&dir.join(format!("{stem}_confounded.pgm")))?;
            panel.map_clean.save_pgm(&dir.join(format!("{stem}_map_clean.pgm")))?;
            panel
                .map_confounded
                .save_pgm(&dir.join(format!("{stem}_map_confounded.pgm")))?;
            written += 4;
        }
    }
    Ok(written)
}
