//! Independent references for the classifier: a naive forward pass and
//! central finite differences for every parameter tensor and the input.

use confbench::nnlite::{auc_on, train, ModelSpec, Parameters, TrainConfig, TrainedClassifier};
use confbench::rng::{stream, Rng};
use confbench::synthgen::{build_dataset, ConfounderKind, DatasetSpec, Example, SplitDataset};
use confbench::ImageGrid;
use rand::Rng as _;

mod common;
use common::{random_cnn, random_image, rel_err};

// the logit is affine in any single parameter or pixel within one
// activation region, so central differences carry no truncation error
const FD_STEP: f64 = 1e-5;
/// Relative error bound.
const FD_TOL: f64 = 1e-4;

fn with_param(model: &TrainedClassifier, slot: usize, i: usize, delta: f64) -> TrainedClassifier {
    let mut entries = model.parameters().entries().to_vec();
    entries[slot].1.data_mut()[i] += delta;
    let spec = *model.spec();
    TrainedClassifier::from_parameters(spec, Parameters::new(&spec, entries).unwrap()).unwrap()
}

fn signature(model: &TrainedClassifier, image: &ImageGrid) -> Vec<u32> {
    model.forward(image).unwrap().1.activation_signature()
}

// Straight-line CHW reference: valid 3x3 convolution, ReLU, 2x2/2 max pool
// (odd trailing row and column dropped), dense head.
fn conv_ref(x: &[f64], (c, h, w): (usize, usize, usize), wt: &[f64], b: &[f64]) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h - 2, w - 2);
    let mut out = vec![0.0; b.len() * oh * ow];
    for o in 0..b.len() {
        for i in 0..oh {
            for j in 0..ow {
                let mut s = b[o];
                for ci in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            s += wt[((o * c + ci) * 3 + ky) * 3 + kx] * x[(ci * h + i + ky) * w + j + kx];
                        }
                    }
                }
                out[(o * oh + i) * ow + j] = s.max(0.0);
            }
        }
    }
    (out, oh, ow)
}

fn pool_ref(x: &[f64], (c, h, w): (usize, usize, usize)) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = vec![f64::NEG_INFINITY; c * ph * pw];
    for ch in 0..c {
        for i in 0..ph {
            for j in 0..pw {
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let v = x[(ch * h + 2 * i + dy) * w + 2 * j + dx];
                    let o = &mut out[(ch * ph + i) * pw + j];
                    *o = o.max(v);
                }
            }
        }
    }
    (out, ph, pw)
}

fn reference_logit(model: &TrainedClassifier, image: &ImageGrid) -> f64 {
    let p = model.parameters();
    let get = |n: &str| p.get(n).unwrap().data();
    let spec = model.spec();
    let (c1, c2) = (spec.conv1_filters, spec.conv2_filters);
    let (a1, h1, w1) = conv_ref(
        image.values(),
        (1, spec.height, spec.width),
        get("conv1.weight"),
        get("conv1.bias"),
    );
    let (p1, ph1, pw1) = pool_ref(&a1, (c1, h1, w1));
    let (a2, h2, w2) = conv_ref(&p1, (c1, ph1, pw1), get("conv2.weight"), get("conv2.bias"));
    let (p2, _, _) = pool_ref(&a2, (c2, h2, w2));
    get("fc.bias")[0] + get("fc.weight").iter().zip(&p2).map(|(a, b)| a * b).sum::<f64>()
}

#[test]
fn forward_matches_naive_reference() {
    let mut rng: Rng = stream(1, &["images".into()]);
    for (size, seed) in [(16, 0), (17, 1), (64, 2)] {
        let model = random_cnn(size, seed);
        for _ in 0..3 {
            let img = random_image(size, size, &mut rng);
            let got = model.logit(&img).unwrap();
            let want = reference_logit(&model, &img);
            assert!(
                (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                "size {size}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn logit_and_forward_agree() {
    let model = random_cnn(20, 3);
    let mut rng: Rng = stream(3, &["images".into()]);
    let img = random_image(20, 20, &mut rng);
    assert_eq!(model.logit(&img).unwrap(), model.forward(&img).unwrap().0);
}

/// Central difference of the logit in one parameter, or `None` when the
/// perturbation crosses a ReLU or pooling boundary.
fn param_fd(model: &TrainedClassifier, img: &ImageGrid, slot: usize, i: usize) -> Option<f64> {
    let sig = signature(model, img);
    let plus = with_param(model, slot, i, FD_STEP);
    let minus = with_param(model, slot, i, -FD_STEP);
    if signature(&plus, img) != sig || signature(&minus, img) != sig {
        return None;
    }
    Some((plus.logit(img).unwrap() - minus.logit(img).unwrap()) / (2.0 * FD_STEP))
}

#[test]
fn parameter_gradients_match_finite_differences_on_every_layer() {
    let size = 16;
    let model = random_cnn(size, 7);
    let mut rng: Rng = stream(7, &["fd".into()]);
    let img = random_image(size, size, &mut rng);
    let grads = model.parameter_gradient(&img).unwrap();
    let names: Vec<String> = model.parameters().entries().iter().map(|(n, _)| n.clone()).collect();
    for (slot, name) in names.iter().enumerate() {
        let n = grads[slot].len();
        // every entry of small tensors, a random subset of large ones
        let idx: Vec<usize> = if n <= 200 {
            (0..n).collect()
        } else {
            (0..200).map(|_| rng.random_range(0..n)).collect()
        };
        let mut checked = 0;
        for i in idx {
            if let Some(fd) = param_fd(&model, &img, slot, i) {
                let g = grads[slot][i];
                assert!(rel_err(fd, g) < FD_TOL, "{name}[{i}]: analytic {g}, numeric {fd}");
                checked += 1;
            }
        }
        assert!(checked > 0, "{name}: every probe crossed a kink");
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    for (size, seed) in [(16, 11), (64, 12)] {
        let model = random_cnn(size, seed);
        let mut rng: Rng = stream(seed, &["fd".into()]);
        let img = random_image(size, size, &mut rng);
        let grad = model.input_gradient(&img).unwrap();
        let sig = signature(&model, &img);
        let mut checked = 0;
        for _ in 0..150 {
            let i = rng.random_range(0..img.len());
            let shifted = |d: f64| {
                let mut v = img.values().to_vec();
                v[i] += d;
                ImageGrid::new(size, size, v).unwrap()
            };
            let (xp, xm) = (shifted(FD_STEP), shifted(-FD_STEP));
            if signature(&model, &xp) != sig || signature(&model, &xm) != sig {
                continue;
            }
            let fd = (model.logit(&xp).unwrap() - model.logit(&xm).unwrap()) / (2.0 * FD_STEP);
            assert!(
                rel_err(fd, grad[i]) < FD_TOL,
                "pixel {i}: analytic {}, numeric {fd}",
                grad[i]
            );
            checked += 1;
        }
        assert!(checked > 100);
    }
}

#[test]
fn linear_model_gradients_match_finite_differences() {
    let spec = ModelSpec::linear(5, 7);
    let model = TrainedClassifier::init(spec, 5).unwrap();
    let mut rng: Rng = stream(5, &["fd".into()]);
    let img = random_image(5, 7, &mut rng);
    let grads = model.parameter_gradient(&img).unwrap();
    for (slot, g) in grads.iter().enumerate() {
        for (i, &gi) in g.iter().enumerate() {
            let fd = param_fd(&model, &img, slot, i).unwrap();
            assert!(rel_err(fd, gi) < FD_TOL);
        }
    }
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let ds = build_dataset(&DatasetSpec {
        n_train: 200,
        n_val: 60,
        n_test: 60,
        image_size: 32,
        p: 100,
        confounder: ConfounderKind::tag(),
        seed: 9,
        ..DatasetSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        seed: 4,
        ..TrainConfig::default()
    };
    let a = train(ModelSpec::tiny_cnn(32), &ds, &cfg).unwrap();
    let first = &a.history[0];
    let last = a.history.last().unwrap();
    assert!(last.train_loss < first.train_loss, "{:?}", a.history);
    let b = train(ModelSpec::tiny_cnn(32), &ds, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn linear_model_learns_separable_toy_task() {
    let ds = build_dataset(&DatasetSpec {
        n_train: 300,
        n_val: 100,
        n_test: 100,
        image_size: 16,
        p: 100,
        confounder: ConfounderKind::tag(),
        seed: 2,
        ..DatasetSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        seed: 1,
        ..TrainConfig::default()
    };
    let model = train(ModelSpec::linear(16, 16), &ds, &cfg).unwrap();
    // the tag is a fixed bright patch on every test positive
    let auc = auc_on(&model, &ds.test).unwrap();
    assert!(auc > 0.9, "auc {auc}");
}

fn toy_split(examples: Vec<Example>, val: Vec<Example>) -> SplitDataset {
    SplitDataset {
        train: examples,
        test: val.clone(),
        clean_test: val.clone(),
        val,
    }
}

#[test]
fn separable_four_pixel_set_is_learned() {
    let mut rng: Rng = stream(12, &["toy".into()]);
    let examples: Vec<Example> = (0..10)
        .map(|i| {
            let label = u8::from(i % 2 == 0);
            let key = if label == 1 {
                rng.random_range(0.6..1.0)
            } else {
                rng.random_range(0.0..0.4)
            };
            let rest: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let img = ImageGrid::new(2, 2, vec![key, rest[0], rest[1], rest[2]]).unwrap();
            Example::clean(img, label)
        })
        .collect();
    let ds = toy_split(examples.clone(), examples);
    let cfg = TrainConfig {
        epochs: 15,
        batch_size: 2,
        lr: 0.05,
        seed: 3,
        ..TrainConfig::default()
    };
    let model = train(ModelSpec::linear(2, 2), &ds, &cfg).unwrap();
    assert!(model.history.len() <= 15);
    assert_eq!(auc_on(&model, &ds.train).unwrap(), 1.0);
}

#[test]
fn noise_labels_give_chance_validation_auc() {
    let mut rng: Rng = stream(13, &["noise".into()]);
    let mut draw = |n: usize| -> Vec<Example> {
        (0..n)
            .map(|i| Example::clean(random_image(8, 8, &mut rng), u8::from(i % 2 == 0)))
            .collect()
    };
    let ds = toy_split(draw(200), draw(200));
    let cfg = TrainConfig {
        epochs: 10,
        seed: 4,
        ..TrainConfig::default()
    };
    let model = train(ModelSpec::linear(8, 8), &ds, &cfg).unwrap();
    let auc = auc_on(&model, &ds.val).unwrap();
    assert!((0.35..=0.65).contains(&auc), "auc {auc}");
}
