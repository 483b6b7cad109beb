//! Gradient-family explainers: raw input gradient, guided backpropagation
//! and Grad-CAM.

use super::{AttributionMap, Method};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::nnlite::{Tensor, TrainedClassifier};

pub fn explain_gradient(model: &TrainedClassifier, image: &ImageGrid) -> Result<AttributionMap> {
    let g = model.input_gradient(image)?;
    AttributionMap::new(image.height(), image.width(), g, Method::Gradient)
}

pub fn explain_guided(model: &TrainedClassifier, image: &ImageGrid) -> Result<AttributionMap> {
    let g = model.guided_input_gradient(image)?;
    AttributionMap::new(image.height(), image.width(), g, Method::Guided)
}

/// Bilinear resize with half-pixel centers (`align_corners = false`),
/// source coordinates clamped at the borders.
pub fn bilinear_upsample(src: &[f64], (sh, sw): (usize, usize), (dh, dw): (usize, usize)) -> Vec<f64> {
    assert_eq!(src.len(), sh * sw);
    let axis = |d: usize, s: usize| -> Vec<(usize, usize, f64)> {
        let scale = s as f64 / d as f64;
        (0..d)
            .map(|i| {
                let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (s - 1) as f64);
                let i0 = x.floor() as usize;
                let i1 = (i0 + 1).min(s - 1);
                (i0, i1, x - i0 as f64)
            })
            .collect()
    };
    let rows = axis(dh, sh);
    let cols = axis(dw, sw);
    let mut out = Vec::with_capacity(dh * dw);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = src[r0 * sw + c0] * (1.0 - fc) + src[r0 * sw + c1] * fc;
            let bottom = src[r1 * sw + c0] * (1.0 - fc) + src[r1 * sw + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// `ReLU(sum_k alpha_k A_k)` with `alpha_k` the spatial mean of the k-th
/// gradient map, upsampled to `out`.
pub fn gradcam_from_parts(features: &Tensor, grads: &Tensor, out: (usize, usize)) -> Result<Vec<f64>> {
    let shape = features.shape();
    if shape.len() != 3 || grads.shape() != shape {
        return Err(Error::shape(format!("{shape:?}"), format!("{:?}", grads.shape())));
    }
    let (k, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let mut cam = vec![0.0; plane];
    for c in 0..k {
        let g = &grads.data()[c * plane..(c + 1) * plane];
        let alpha = g.iter().sum::<f64>() / plane as f64;
        if alpha == 0.0 {
            continue;
        }
        let a = &features.data()[c * plane..(c + 1) * plane];
        for (m, v) in cam.iter_mut().zip(a) {
            *m += alpha * v;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(bilinear_upsample(&cam, (h, w), out))
}

pub fn explain_gradcam(model: &TrainedClassifier, image: &ImageGrid) -> Result<AttributionMap> {
    let (features, grads) = model.gradcam_ingredients(image)?;
    let map = gradcam_from_parts(&features, &grads, (image.height(), image.width()))?;
    AttributionMap::new(image.height(), image.width(), map, Method::GradCam)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_corner_pattern() {
        // independent per-axis weights for 2 -> 4 with half-pixel centers:
        // out 0 -> src -0.25 (clamped to 0), 1 -> 0.25, 2 -> 0.75, 3 -> 1.25 (clamped to 1)
        let w = [1.0, 0.75, 0.25, 0.0];
        let out = bilinear_upsample(&[1.0, 0.0, 0.0, 0.0], (2, 2), (4, 4));
        for r in 0..4 {
            for c in 0..4 {
                assert!((out[r * 4 + c] - w[r] * w[c]).abs() < 1e-12, "({r},{c})");
            }
        }
    }

    #[test]
    fn upsample_identity_and_constant() {
        let src = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert_eq!(bilinear_upsample(&src, (2, 3), (2, 3)), src.to_vec());
        assert!(bilinear_upsample(&[0.7; 4], (2, 2), (5, 7))
            .iter()
            .all(|v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn zero_gradients_give_zero_cam() {
        let f = Tensor::new(vec![2, 2, 2], vec![1.0; 8]).unwrap();
        let g = Tensor::zeros(vec![2, 2, 2]);
        assert!(gradcam_from_parts(&f, &g, (4, 4)).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_hot_alpha_reproduces_feature_map() {
        let f = Tensor::new(vec![2, 2, 2], vec![1.0, 0.0, 0.0, 0.0, 5.0, 5.0, 5.0, 5.0]).unwrap();
        let g = Tensor::new(vec![2, 2, 2], vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let cam = gradcam_from_parts(&f, &g, (4, 4)).unwrap();
        assert_eq!(cam, bilinear_upsample(&[1.0, 0.0, 0.0, 0.0], (2, 2), (4, 4)));
    }
}
