//! Confounder-detection metrics: Confounder Sensitivity over the top-ranked
//! attributions, explanation NCC between maps with and without the
//! confounder, the prediction-flip evaluation pool, ROC AUC and Pearson r.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::explain::AttributionMap;
use crate::image::ConfounderMask;
use crate::nnlite::TrainedClassifier;
use crate::synthgen::EvalPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankMode {
    Absolute,
    Signed,
}

impl fmt::Display for RankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankMode::Absolute => "absolute",
            RankMode::Signed => "signed",
        })
    }
}

impl FromStr for RankMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "absolute" | "abs" => Ok(RankMode::Absolute),
            "signed" => Ok(RankMode::Signed),
            other => Err(Error::Param(format!("unknown rank mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    pub top_frac: f64,
    pub max_samples: usize,
    pub rank_mode: RankMode,
    pub decision_threshold: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            top_frac: 0.10,
            max_samples: 100,
            rank_mode: RankMode::Absolute,
            decision_threshold: 0.5,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_frac > 0.0 && self.top_frac < 1.0) {
            return Err(Error::Param(format!("top_frac {} not in (0,1)", self.top_frac)));
        }
        if self.max_samples == 0 {
            return Err(Error::Param("max_samples must be >= 1".into()));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(Error::Param("decision threshold must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Test positives whose predicted class differs with and without the
/// confounder, in test-set order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipPool {
    pub pairs: Vec<EvalPair>,
    /// Number of pairs actually used (`pairs.len()`).
    pub truncated_to: usize,
    /// Number of flipping pairs found before truncation.
    pub n_flipped: usize,
    /// No pair flipped; `pairs` holds the first confounded positives instead.
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricResult {
    /// Mean of `per_image_values`; `None` when nothing was evaluated.
    pub value: Option<f64>,
    pub n_evaluated: usize,
    pub per_image_values: Vec<f64>,
    pub fallback_used: bool,
    /// Items skipped because they could not be scored (e.g. empty mask).
    pub n_excluded: usize,
    /// NCC pairs with a zero-variance map.
    pub n_degenerate: usize,
}

impl MetricResult {
    fn from_values(per_image_values: Vec<f64>, n_excluded: usize, n_degenerate: usize) -> Self {
        let n = per_image_values.len();
        let value = (n > 0).then(|| per_image_values.iter().sum::<f64>() / n as f64);
        Self {
            value,
            n_evaluated: n,
            per_image_values,
            fallback_used: false,
            n_excluded,
            n_degenerate,
        }
    }

    pub fn with_fallback(mut self, fallback_used: bool) -> Self {
        self.fallback_used = fallback_used;
        self
    }
}

/// Keeps pairs whose predicted class flips when the confounder is added,
/// up to `max_samples`. When nothing flips, falls back to the first
/// `max_samples` pairs and says so.
pub fn build_flip_pool(model: &TrainedClassifier, pairs: &[EvalPair], cfg: &MetricConfig) -> Result<FlipPool> {
    cfg.validate()?;
    let mut flipped = Vec::new();
    let mut n_flipped = 0;
    for pair in pairs {
        let with = model.predict_class(&pair.confounded, cfg.decision_threshold)?;
        let without = model.predict_class(&pair.clean, cfg.decision_threshold)?;
        if with != without {
            n_flipped += 1;
            if flipped.len() < cfg.max_samples {
                flipped.push(pair.clone());
            }
        }
    }
    let fallback_used = flipped.is_empty();
    if fallback_used {
        flipped = pairs.iter().take(cfg.max_samples).cloned().collect();
    }
    Ok(FlipPool {
        truncated_to: flipped.len(),
        pairs: flipped,
        n_flipped,
        fallback_used,
    })
}

/// `ceil(frac * n)`, robust to representation error in `frac * n`.
pub fn top_k(frac: f64, n: usize) -> usize {
    let raw = frac * n as f64;
    let k = (raw - 1e-9 * raw.abs().max(1.0)).ceil();
    (k.max(1.0) as usize).min(n)
}

/// Pixel indices sorted by decreasing score (magnitude in absolute mode),
/// ties by increasing row-major index.
pub fn rank_pixels(values: &[f64], mode: RankMode) -> Vec<usize> {
    let key = |v: f64| match mode {
        RankMode::Absolute => v.abs(),
        RankMode::Signed => v,
    };
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| key(values[b]).total_cmp(&key(values[a])).then(a.cmp(&b)));
    idx
}

/// Fraction of the mask covered by the top-k attributed pixels of one map.
pub fn sensitivity_single(values: &[f64], mask: &ConfounderMask, cfg: &MetricConfig) -> Result<f64> {
    if values.len() != mask.bits().len() {
        return Err(Error::shape(mask.bits().len(), values.len()));
    }
    if mask.count() == 0 {
        return Err(Error::Metric("empty confounder mask".into()));
    }
    let k = top_k(cfg.top_frac, values.len());
    let hits = rank_pixels(values, cfg.rank_mode)
        .into_iter()
        .take(k)
        .filter(|&i| mask.bits()[i])
        .count();
    Ok(hits as f64 / mask.count() as f64)
}

/// Mean Confounder Sensitivity over (map, mask) items. Items with an empty
/// mask are excluded and counted. Attributions outside the mask are not
/// penalised.
pub fn confounder_sensitivity(
    items: &[(&AttributionMap, &ConfounderMask)],
    cfg: &MetricConfig,
) -> Result<MetricResult> {
    cfg.validate()?;
    let mut values = Vec::with_capacity(items.len());
    let mut excluded = 0;
    for (map, mask) in items {
        if map.height() != mask.height() || map.width() != mask.width() {
            return Err(Error::shape(
                format!("{}x{}", mask.height(), mask.width()),
                format!("{}x{}", map.height(), map.width()),
            ));
        }
        if mask.count() == 0 {
            excluded += 1;
            continue;
        }
        values.push(sensitivity_single(map.values(), mask, cfg)?);
    }
    Ok(MetricResult::from_values(values, excluded, 0))
}

/// Zero-normalized cross correlation with population standard deviations.
/// Returns `(ncc, degenerate)`; a zero-variance input gives `(0, true)`.
pub fn ncc(a: &[f64], b: &[f64]) -> Result<(f64, bool)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(a.len(), b.len()));
    }
    let n = a.len() as f64;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    let (sa, sb) = ((saa / n).sqrt(), (sbb / n).sqrt());
    let scale_a = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let scale_b = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    if sa <= 1e-12 * scale_a || sb <= 1e-12 * scale_b {
        return Ok((0.0, true));
    }
    Ok((((sab / n) / (sa * sb)).clamp(-1.0, 1.0), false))
}

/// Mean NCC over (confounded map, clean map) pairs.
pub fn explanation_ncc(pairs: &[(&AttributionMap, &AttributionMap)]) -> Result<MetricResult> {
    let mut values = Vec::with_capacity(pairs.len());
    let mut degenerate = 0;
    for (a, b) in pairs {
        if a.height() != b.height() || a.width() != b.width() {
            return Err(Error::shape(
                format!("{}x{}", a.height(), a.width()),
                format!("{}x{}", b.height(), b.width()),
            ));
        }
        let (v, deg) = ncc(a.values(), b.values())?;
        degenerate += usize::from(deg);
        values.push(v);
    }
    Ok(MetricResult::from_values(values, 0, degenerate))
}

/// ROC AUC from rank statistics: `P(s+ > s-) + P(s+ = s-) / 2`.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    if let Some(l) = labels.iter().find(|l| **l > 1) {
        return Err(Error::Metric(format!("label {l} is not 0/1")));
    }
    let n_pos = labels.iter().filter(|l| **l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based average rank of the tie block
        let rank = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += rank * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::shape(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::Metric("correlation needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::Metric("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
