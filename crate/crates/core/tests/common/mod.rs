//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use confbench::nnlite::{ModelSpec, Parameters, Tensor, TrainedClassifier};
use confbench::rng::{stream, Rng};
use confbench::ImageGrid;
use rand::Rng as _;

pub fn random_image(h: usize, w: usize, rng: &mut Rng) -> ImageGrid {
    ImageGrid::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

/// TinyCnn whose every parameter is drawn by `fill(name, rng)`.
pub fn cnn_with(size: usize, seed: u64, fill: impl Fn(&str, &mut Rng) -> f64) -> TrainedClassifier {
    let spec = ModelSpec::tiny_cnn(size);
    let mut rng: Rng = stream(seed, &["weights".into()]);
    let entries = spec
        .parameter_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| fill(name, &mut rng)).collect();
            (name.to_string(), Tensor::new(shape, data).unwrap())
        })
        .collect();
    TrainedClassifier::from_parameters(spec, Parameters::new(&spec, entries).unwrap()).unwrap()
}

/// Random weights with small positive biases, so most ReLUs are active.
pub fn random_cnn(size: usize, seed: u64) -> TrainedClassifier {
    cnn_with(size, seed, |name, rng| {
        if name.ends_with(".bias") {
            rng.random_range(0.0..0.1)
        } else {
            rng.random_range(-0.5..0.5)
        }
    })
}

/// `|a - b| / max(|a|, |b|)`, with a floor far below any gradient the
/// models produce so that exact zeros compare as equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-9)
}

pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Sort by key with an index tie-break and count mask hits among the first
/// `ceil(frac * n)` entries.
pub fn direct_cs(values: &[f64], bits: &[bool], frac: f64, signed: bool) -> f64 {
    let n = values.len();
    let k = ((frac * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let key = |v: f64| if signed { v } else { v.abs() };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| key(values[b]).partial_cmp(&key(values[a])).unwrap().then(a.cmp(&b)));
    let hits = idx[..k.min(n)].iter().filter(|&&i| bits[i]).count();
    hits as f64 / bits.iter().filter(|b| **b).count() as f64
}

pub fn direct_ncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
    let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n).sqrt();
    let sb = (b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sa * sb)
}
