//! Superpixel grid, masking and the coalition game shared by LIME and SHAP.

use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::nnlite::TrainedClassifier;

/// Regular `g x g` grid of rectangular segments, ids in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentGrid {
    height: usize,
    width: usize,
    ids: Vec<usize>,
    counts: Vec<usize>,
}

impl SegmentGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn id(&self, row: usize, col: usize) -> usize {
        self.ids[row * self.width + col]
    }

    pub fn n_segments(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Assigns every pixel its segment's value.
    pub fn broadcast(&self, per_segment: &[f64]) -> Vec<f64> {
        debug_assert_eq!(per_segment.len(), self.n_segments());
        self.ids.iter().map(|&s| per_segment[s]).collect()
    }
}

/// `id(row, col) = (row / (H/g)) * g + col / (W/g)`.
pub fn segment_grid(image: &ImageGrid, g: usize) -> Result<SegmentGrid> {
    let (h, w) = (image.height(), image.width());
    if g == 0 || h % g != 0 || w % g != 0 {
        return Err(Error::Param(format!("grid {g} does not divide image {h}x{w}")));
    }
    let (bh, bw) = (h / g, w / g);
    let ids = (0..h * w).map(|i| (i / w / bh) * g + (i % w) / bw).collect();
    Ok(SegmentGrid {
        height: h,
        width: w,
        ids,
        counts: vec![bh * bw; g * g],
    })
}

/// Reference image supplying the content of switched-off segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline(pub ImageGrid);

impl Baseline {
    pub fn image(&self) -> &ImageGrid {
        &self.0
    }
}

/// Keeps pixels of segments whose bit is set, takes the baseline elsewhere.
pub fn perturb(image: &ImageGrid, segs: &SegmentGrid, bits: &[bool], baseline: &Baseline) -> Result<ImageGrid> {
    if bits.len() != segs.n_segments() {
        return Err(Error::shape(segs.n_segments(), bits.len()));
    }
    let base = baseline.image();
    if !image.same_shape(base) || image.height() != segs.height() || image.width() != segs.width() {
        return Err(Error::shape(
            format!("{}x{}", image.height(), image.width()),
            format!(
                "{}x{} baseline / {}x{} segments",
                base.height(),
                base.width(),
                segs.height(),
                segs.width()
            ),
        ));
    }
    let values = image
        .values()
        .iter()
        .zip(base.values())
        .zip(segs.ids())
        .map(|((x, b), s)| if bits[*s] { *x } else { *b })
        .collect();
    ImageGrid::new(image.height(), image.width(), values)
}

/// A scalar function of an image explained by the perturbation methods.
pub trait Scorer: Sync {
    fn score(&self, image: &ImageGrid) -> Result<f64>;
}

/// Positive-class probability.
impl Scorer for TrainedClassifier {
    fn score(&self, image: &ImageGrid) -> Result<f64> {
        self.predict_prob(image)
    }
}

/// Positive-class logit.
pub struct LogitScorer<'a>(pub &'a TrainedClassifier);

impl Scorer for LogitScorer<'_> {
    fn score(&self, image: &ImageGrid) -> Result<f64> {
        self.0.logit(image)
    }
}

/// Wraps an arbitrary function.
pub struct FnScorer<F>(pub F);

impl<F: Fn(&ImageGrid) -> f64 + Sync> Scorer for FnScorer<F> {
    fn score(&self, image: &ImageGrid) -> Result<f64> {
        Ok((self.0)(image))
    }
}

/// `v(S) = score(perturb(image, S on, rest baseline))`.
pub struct CoalitionGame<'a, S: Scorer + ?Sized> {
    pub scorer: &'a S,
    pub image: &'a ImageGrid,
    pub segs: &'a SegmentGrid,
    pub baseline: &'a Baseline,
}

impl<S: Scorer + ?Sized> CoalitionGame<'_, S> {
    pub fn players(&self) -> usize {
        self.segs.n_segments()
    }

    pub fn value(&self, bits: &[bool]) -> Result<f64> {
        let img = perturb(self.image, self.segs, bits, self.baseline)?;
        self.scorer.score(&img)
    }
}
