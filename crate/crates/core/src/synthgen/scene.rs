//! Parametric chest-film-like scenes with a heart-to-thorax width label.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::rng::Rng;

pub const MIN_RATIO: f64 = 0.42;
pub const MAX_RATIO: f64 = 0.58;
/// Heart/thorax width ratio above which a scene is labelled positive.
pub const RATIO_THRESHOLD: f64 = 0.5;

const BACKGROUND: f64 = 0.08;
const THORAX: f64 = 0.35;
const HEART: f64 = 0.7;

/// Geometry and noise of a single rendered scene, in pixels / intensity units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub thorax_halfwidth: f64,
    pub heart_halfwidth: f64,
    pub heart_center: (f64, f64),
    pub noise_sigma: f64,
    pub rib_amplitude: f64,
}

impl SceneParams {
    pub fn ratio(&self) -> f64 {
        self.heart_halfwidth / self.thorax_halfwidth
    }

    pub fn label(&self) -> u8 {
        u8::from(self.ratio() > RATIO_THRESHOLD)
    }

    pub fn validate(&self, size: usize) -> Result<()> {
        let s = size as f64;
        if !(self.thorax_halfwidth > 0.0 && self.heart_halfwidth > 0.0) {
            return Err(Error::Param("half-widths must be positive".into()));
        }
        if self.heart_halfwidth >= self.thorax_halfwidth {
            return Err(Error::Param("heart must be narrower than thorax".into()));
        }
        let r = self.ratio();
        if !(MIN_RATIO..=MAX_RATIO).contains(&r) {
            return Err(Error::Param(format!(
                "heart/thorax ratio {r:.4} outside [{MIN_RATIO}, {MAX_RATIO}]"
            )));
        }
        let (row, col) = self.heart_center;
        if !(0.0..s).contains(&row) || !(0.0..s).contains(&col) {
            return Err(Error::Param(format!("heart center ({row}, {col}) outside image")));
        }
        if self.noise_sigma < 0.0 || self.rib_amplitude < 0.0 {
            return Err(Error::Param("noise and rib amplitude must be >= 0".into()));
        }
        Ok(())
    }
}

/// Sampling ranges for scene parameters. Spatial ranges are fractions of the
/// image side so that the prior scales with `image_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePrior {
    pub ratio: (f64, f64),
    pub thorax_halfwidth: (f64, f64),
    pub heart_row: (f64, f64),
    pub heart_col: (f64, f64),
    pub noise_sigma: f64,
    pub rib_amplitude: f64,
}

impl Default for ScenePrior {
    fn default() -> Self {
        Self {
            ratio: (MIN_RATIO, MAX_RATIO),
            thorax_halfwidth: (0.28, 0.44),
            heart_row: (0.52, 0.58),
            heart_col: (0.46, 0.54),
            noise_sigma: 0.25,
            rib_amplitude: 0.08,
        }
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl ScenePrior {
    pub fn sample(&self, size: usize, rng: &mut Rng) -> SceneParams {
        let s = size as f64;
        let thorax = uniform(rng, self.thorax_halfwidth) * s;
        let ratio = uniform(rng, self.ratio);
        SceneParams {
            thorax_halfwidth: thorax,
            heart_halfwidth: ratio * thorax,
            heart_center: (uniform(rng, self.heart_row) * s, uniform(rng, self.heart_col) * s),
            noise_sigma: self.noise_sigma,
            rib_amplitude: self.rib_amplitude,
        }
    }
}

fn inside_ellipse(row: f64, col: f64, center: (f64, f64), half_h: f64, half_w: f64) -> bool {
    let dy = (row - center.0) / half_h;
    let dx = (col - center.1) / half_w;
    dy * dy + dx * dx <= 1.0
}

/// Renders the scene: dark background, thorax ellipse, brighter heart
/// ellipse, horizontal rib texture inside the thorax and clipped Gaussian
/// noise. Returns the image with its label.
pub fn render_scene(params: &SceneParams, size: usize, rng: &mut Rng) -> Result<(ImageGrid, u8)> {
    params.validate(size)?;
    let s = size as f64;
    let thorax_center = (0.5 * s, 0.5 * s);
    let thorax_half_h = (1.15 * params.thorax_halfwidth).min(0.46 * s);
    let heart_half_h = 0.75 * params.heart_halfwidth;
    let rib_period = (s / 8.0).max(2.0);
    let noise = (params.noise_sigma > 0.0).then(|| Normal::new(0.0, params.noise_sigma).expect("sigma validated"));

    let mut values = Vec::with_capacity(size * size);
    for r in 0..size {
        let y = r as f64 + 0.5;
        for c in 0..size {
            let x = c as f64 + 0.5;
            let mut v = BACKGROUND;
            if inside_ellipse(y, x, thorax_center, thorax_half_h, params.thorax_halfwidth) {
                v = THORAX;
                if inside_ellipse(y, x, params.heart_center, heart_half_h, params.heart_halfwidth) {
                    v = HEART;
                } else if params.rib_amplitude > 0.0 {
                    v += params.rib_amplitude * (std::f64::consts::TAU * y / rib_period).sin();
                }
            }
            if let Some(n) = &noise {
                v += n.sample(rng);
            }
            values.push(v);
        }
    }
    Ok((ImageGrid::from_unclipped(size, size, values), params.label()))
}
