//! Attribution maps for the positive class from five methods: raw input
//! gradient, guided backpropagation, Grad-CAM, LIME and the partition
//! (Owen value) explainer, plus a brute-force Shapley oracle.

mod attribution;
mod gradient;
mod lime;
mod segments;
mod shap;

pub use attribution::{AttributionMap, Method, Target};
pub use gradient::{bilinear_upsample, explain_gradcam, explain_gradient, explain_guided, gradcam_from_parts};
pub use lime::{explain_lime, fit_weighted_ridge, kernel_weight, lime_fit, LimeConfig, LimeFit};
pub use segments::{perturb, segment_grid, Baseline, CoalitionGame, FnScorer, LogitScorer, Scorer, SegmentGrid};
pub use shap::{exact_shapley, explain_shap_partition, owen_values, PartitionNode, ShapConfig, MAX_EXACT_SEGMENTS};

use crate::error::Result;
use crate::image::ImageGrid;
use crate::nnlite::TrainedClassifier;

/// Everything needed to run any of the five methods on one model.
#[derive(Debug, Clone)]
pub struct ExplainContext {
    pub segments_per_side: usize,
    pub baseline: Baseline,
    pub lime: LimeConfig,
    pub shap: ShapConfig,
}

impl ExplainContext {
    pub fn new(baseline: ImageGrid) -> Self {
        Self {
            segments_per_side: 8,
            baseline: Baseline(baseline),
            lime: LimeConfig::default(),
            shap: ShapConfig::default(),
        }
    }

    pub fn explain(&self, method: Method, model: &TrainedClassifier, image: &ImageGrid) -> Result<AttributionMap> {
        match method {
            Method::Gradient => explain_gradient(model, image),
            Method::Guided => explain_guided(model, image),
            Method::GradCam => explain_gradcam(model, image),
            Method::Lime => {
                let segs = segment_grid(image, self.segments_per_side)?;
                explain_lime(model, image, &segs, &self.baseline, &self.lime)
            }
            Method::Shap => {
                let segs = segment_grid(image, self.segments_per_side)?;
                explain_shap_partition(model, image, &segs, &self.baseline, &self.shap)
            }
        }
    }
}
