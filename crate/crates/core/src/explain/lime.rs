//! LIME on a superpixel grid: random on/off masks, an exponential kernel on
//! the fraction of switched-off segments, and a weighted ridge surrogate
//! whose per-segment coefficients become the attribution.

use rand::Rng as _;
use rayon::prelude::*;

use super::segments::{Baseline, CoalitionGame, Scorer, SegmentGrid};
use super::{AttributionMap, Method};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct LimeConfig {
    pub n_samples: usize,
    pub kernel_width: f64,
    pub ridge: f64,
    pub on_probability: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            n_samples: 500,
            kernel_width: 0.25,
            ridge: 1e-3,
            on_probability: 0.5,
            seed: 0,
        }
    }
}

impl LimeConfig {
    pub fn validate(&self, n_segments: usize) -> Result<()> {
        if self.n_samples < n_segments {
            return Err(Error::Param(format!(
                "LIME needs at least {n_segments} samples, got {}",
                self.n_samples
            )));
        }
        if !(self.ridge > 0.0) {
            return Err(Error::Param("ridge penalty must be > 0".into()));
        }
        if !(self.kernel_width > 0.0) {
            return Err(Error::Param("kernel width must be > 0".into()));
        }
        if !(self.on_probability > 0.0 && self.on_probability < 1.0) {
            return Err(Error::Param("on-probability must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Fitted local surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct LimeFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub samples: Vec<Vec<bool>>,
    pub responses: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `exp(-d^2 / sigma^2)` with `d` the fraction of zero bits.
pub fn kernel_weight(bits: &[bool], kernel_width: f64) -> f64 {
    let off = bits.iter().filter(|b| !**b).count() as f64 / bits.len() as f64;
    (-(off * off) / (kernel_width * kernel_width)).exp()
}

/// Solves `(Z'WZ + lambda I) beta = Z'Wy` with an unpenalized intercept
/// column. Returns `(intercept, coefficients)`.
pub fn fit_weighted_ridge(z: &[Vec<bool>], y: &[f64], w: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let n = z.len();
    if n == 0 || y.len() != n || w.len() != n {
        return Err(Error::shape(n, format!("{} responses / {} weights", y.len(), w.len())));
    }
    let m = z[0].len();
    if z.iter().any(|row| row.len() != m) {
        return Err(Error::Param("ragged design matrix".into()));
    }
    let dim = m + 1;
    // column 0 is the intercept
    let mut a = vec![0.0; dim * dim];
    let mut b = vec![0.0; dim];
    let mut active = Vec::with_capacity(dim);
    for ((row, &yi), &wi) in z.iter().zip(y).zip(w) {
        active.clear();
        active.push(0);
        active.extend(row.iter().enumerate().filter_map(|(j, &on)| on.then_some(j + 1)));
        for &p in &active {
            b[p] += wi * yi;
            for &q in &active {
                a[p * dim + q] += wi;
            }
        }
    }
    for j in 1..dim {
        a[j * dim + j] += lambda;
    }
    let beta = cholesky_solve(&mut a, &b, dim)?;
    Ok((beta[0], beta[1..].to_vec()))
}

/// In-place Cholesky factorization and solve for a symmetric positive
/// definite system.
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 1e-14 * max_diag.max(f64::MIN_POSITIVE)) {
            return Err(Error::Numerical {
                msg: "ridge system is not positive definite".into(),
                condition: if d > 0.0 { max_diag / d } else { f64::INFINITY },
            });
        }
        let l = d.sqrt();
        min_pivot = min_pivot.min(d);
        a[j * n + j] = l;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / l;
        }
    }
    let mut x = b.to_vec();
    for i in 0..n {
        let s = x[i] - (0..i).map(|k| a[i * n + k] * x[k]).sum::<f64>();
        x[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let s = x[i] - (i + 1..n).map(|k| a[k * n + i] * x[k]).sum::<f64>();
        x[i] = s / a[i * n + i];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            msg: "non-finite ridge solution".into(),
            condition: max_diag / min_pivot,
        });
    }
    Ok(x)
}

/// Draws masks (the first is all-on), scores them in parallel into fixed
/// slots, and fits the surrogate.
pub fn lime_fit<S: Scorer + ?Sized>(
    scorer: &S,
    image: &ImageGrid,
    segs: &SegmentGrid,
    baseline: &Baseline,
    cfg: &LimeConfig,
) -> Result<LimeFit> {
    let m = segs.n_segments();
    cfg.validate(m)?;
    let mut rng = stream(cfg.seed, &["lime".into()]);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    samples.push(vec![true; m]);
    while samples.len() < cfg.n_samples {
        samples.push((0..m).map(|_| rng.random_bool(cfg.on_probability)).collect());
    }
    let game = CoalitionGame {
        scorer,
        image,
        segs,
        baseline,
    };
    let responses = samples
        .par_iter()
        .map(|bits| game.value(bits))
        .collect::<Result<Vec<f64>>>()?;
    let weights: Vec<f64> = samples.iter().map(|s| kernel_weight(s, cfg.kernel_width)).collect();
    let (intercept, coefficients) = fit_weighted_ridge(&samples, &responses, &weights, cfg.ridge)?;
    Ok(LimeFit {
        intercept,
        coefficients,
        samples,
        responses,
        weights,
    })
}

pub fn explain_lime<S: Scorer + ?Sized>(
    scorer: &S,
    image: &ImageGrid,
    segs: &SegmentGrid,
    baseline: &Baseline,
    cfg: &LimeConfig,
) -> Result<AttributionMap> {
    let fit = lime_fit(scorer, image, segs, baseline, cfg)?;
    AttributionMap::new(
        image.height(),
        image.width(),
        segs.broadcast(&fit.coefficients),
        Method::Lime,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_weights() {
        assert_eq!(kernel_weight(&[true, true], 0.25), 1.0);
        let w = kernel_weight(&[true, false], 0.25);
        assert!((w - (-4.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn two_segment_exhaustive_matches_least_squares() {
        // y = 0.2 + 0.5 z1 - 0.3 z2 + a non-additive wobble on 11
        let z = vec![
            vec![false, false],
            vec![false, true],
            vec![true, false],
            vec![true, true],
        ];
        let y = [0.2, -0.1, 0.7, 0.5];
        // hand solution of the 4-point normal equations (X = [1 z1 z2]):
        // X'X = [[4,2,2],[2,2,1],[2,1,2]], X'y = [1.3, 1.2, 0.4]
        // -> beta = (0.175, 0.55, -0.25)
        let (b0, b) = fit_weighted_ridge(&z, &y, &[1.0; 4], 1e-12).unwrap();
        assert!((b0 - 0.175).abs() < 1e-9, "{b0}");
        assert!((b[0] - 0.55).abs() < 1e-9);
        assert!((b[1] + 0.25).abs() < 1e-9);
    }

    #[test]
    fn constant_response_gives_zero_coefficients() {
        let z = vec![
            vec![true, false, true],
            vec![false, false, true],
            vec![true, true, false],
            vec![false, true, true],
        ];
        let (b0, b) = fit_weighted_ridge(&z, &[0.4; 4], &[1.0, 0.5, 0.2, 0.9], 1e-3).unwrap();
        assert!((b0 - 0.4).abs() < 1e-10);
        assert!(b.iter().all(|c| c.abs() < 1e-10));
    }

    #[test]
    fn singular_system_reports_condition() {
        // an intercept alone with an all-off design collapses; force
        // singularity through a zero-weight design
        let z = vec![vec![true], vec![false]];
        let err = fit_weighted_ridge(&z, &[1.0, 0.0], &[0.0, 0.0], 1e-3).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }), "{err}");
    }

    #[test]
    fn config_validation() {
        let cfg = LimeConfig {
            n_samples: 10,
            ..LimeConfig::default()
        };
        assert!(cfg.validate(64).is_err());
        assert!(LimeConfig {
            ridge: 0.0,
            ..LimeConfig::default()
        }
        .validate(64)
        .is_err());
        assert!(LimeConfig::default().validate(64).is_ok());
    }
}
