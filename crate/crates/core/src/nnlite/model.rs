//! Linear and TinyCnn binary classifiers with exact backward passes.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use super::layers::{self, K};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::rng::{stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Linear,
    TinyCnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::TinyCnn => "tiny_cnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear" => Ok(ModelKind::Linear),
            "tiny_cnn" | "tinycnn" | "cnn" => Ok(ModelKind::TinyCnn),
            other => Err(Error::Param(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Architecture description. TinyCnn is
/// `conv3x3(c1) -> relu -> pool2 -> conv3x3(c2) -> relu -> pool2 -> fc -> logit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub height: usize,
    pub width: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
}

impl ModelSpec {
    pub fn tiny_cnn(size: usize) -> Self {
        Self {
            kind: ModelKind::TinyCnn,
            height: size,
            width: size,
            conv1_filters: 8,
            conv2_filters: 16,
        }
    }

    pub fn linear(height: usize, width: usize) -> Self {
        Self {
            kind: ModelKind::Linear,
            height,
            width,
            conv1_filters: 0,
            conv2_filters: 0,
        }
    }

    pub(crate) fn dims(&self) -> Result<CnnDims> {
        CnnDims::new(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Param("model input must be non-empty".into()));
        }
        if self.kind == ModelKind::TinyCnn {
            if self.conv1_filters == 0 || self.conv2_filters == 0 {
                return Err(Error::Param("conv filter counts must be positive".into()));
            }
            self.dims()?;
        }
        Ok(())
    }

    /// `(name, shape)` of every parameter in storage order.
    pub fn parameter_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match self.kind {
            ModelKind::Linear => vec![
                ("linear.weight", vec![self.height, self.width]),
                ("linear.bias", vec![1]),
            ],
            ModelKind::TinyCnn => {
                let (c1, c2) = (self.conv1_filters, self.conv2_filters);
                let feat = self.dims().map(|d| d.features()).unwrap_or(0);
                vec![
                    ("conv1.weight", vec![c1, 1, K, K]),
                    ("conv1.bias", vec![c1]),
                    ("conv2.weight", vec![c2, c1, K, K]),
                    ("conv2.bias", vec![c2]),
                    ("fc.weight", vec![1, feat]),
                    ("fc.bias", vec![1]),
                ]
            }
        }
    }

    /// Shape of the last convolutional block output (after pooling).
    pub fn feature_shape(&self) -> Result<[usize; 3]> {
        if self.kind != ModelKind::TinyCnn {
            return Err(Error::Unsupported(format!("{} has no feature maps", self.kind)));
        }
        let d = self.dims()?;
        Ok([d.c2, d.ph2, d.pw2])
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CnnDims {
    pub h: usize,
    pub w: usize,
    pub c1: usize,
    pub c2: usize,
    pub h1: usize,
    pub w1: usize,
    pub ph1: usize,
    pub pw1: usize,
    pub h2: usize,
    pub w2: usize,
    pub ph2: usize,
    pub pw2: usize,
}

impl CnnDims {
    fn new(spec: &ModelSpec) -> Result<Self> {
        let shrink = |n: usize| n.checked_sub(K - 1).filter(|v| *v > 0);
        let too_small = || Error::Param(format!("input {}x{} too small for TinyCnn", spec.height, spec.width));
        let h1 = shrink(spec.height).ok_or_else(too_small)?;
        let w1 = shrink(spec.width).ok_or_else(too_small)?;
        let (ph1, pw1) = (h1 / 2, w1 / 2);
        let h2 = shrink(ph1).ok_or_else(too_small)?;
        let w2 = shrink(pw1).ok_or_else(too_small)?;
        let (ph2, pw2) = (h2 / 2, w2 / 2);
        if ph2 == 0 || pw2 == 0 {
            return Err(too_small());
        }
        Ok(Self {
            h: spec.height,
            w: spec.width,
            c1: spec.conv1_filters,
            c2: spec.conv2_filters,
            h1,
            w1,
            ph1,
            pw1,
            h2,
            w2,
            ph2,
            pw2,
        })
    }

    pub fn features(&self) -> usize {
        self.c2 * self.ph2 * self.pw2
    }
}

/// Named parameter tensors in the order given by [`ModelSpec::parameter_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    entries: Vec<(String, Tensor)>,
}

impl Parameters {
    pub fn new(spec: &ModelSpec, entries: Vec<(String, Tensor)>) -> Result<Self> {
        let expected = spec.parameter_shapes();
        if entries.len() != expected.len() {
            return Err(Error::shape(
                format!("{} parameter tensors", expected.len()),
                entries.len(),
            ));
        }
        for ((name, t), (ename, eshape)) in entries.iter().zip(&expected) {
            if name != ename || t.shape() != eshape.as_slice() {
                return Err(Error::shape(
                    format!("{ename} {eshape:?}"),
                    format!("{name} {:?}", t.shape()),
                ));
            }
            if !t.is_finite() {
                return Err(Error::Param(format!("parameter {name} has non-finite values")));
            }
        }
        Ok(Self { entries })
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            entries: spec
                .parameter_shapes()
                .into_iter()
                .map(|(n, s)| (n.to_string(), Tensor::zeros(s)))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub(crate) fn slot(&self, i: usize) -> &[f64] {
        self.entries[i].1.data()
    }

    pub(crate) fn slot_mut(&mut self, i: usize) -> &mut [f64] {
        self.entries[i].1.data_mut()
    }

    pub(crate) fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: Option<f64>,
}

/// A binary classifier producing one logit for the positive class.
/// Immutable once built; safe to share across threads for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    spec: ModelSpec,
    params: Parameters,
    pub val_auc: Option<f64>,
    pub history: Vec<EpochStats>,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardTrace {
    Linear {
        input: Vec<f64>,
        logit: f64,
    },
    TinyCnn {
        input: Vec<f64>,
        /// conv1 post-ReLU, `c1 x h1 x w1`
        act1: Vec<f64>,
        pool1: Vec<f64>,
        arg1: Vec<u32>,
        /// conv2 post-ReLU, `c2 x h2 x w2`
        act2: Vec<f64>,
        pool2: Vec<f64>,
        arg2: Vec<u32>,
        logit: f64,
    },
}

impl ForwardTrace {
    fn empty(spec: &ModelSpec) -> Result<Self> {
        Ok(match spec.kind {
            ModelKind::Linear => ForwardTrace::Linear {
                input: vec![0.0; spec.height * spec.width],
                logit: 0.0,
            },
            ModelKind::TinyCnn => {
                let d = spec.dims()?;
                ForwardTrace::TinyCnn {
                    input: vec![0.0; d.h * d.w],
                    act1: vec![0.0; d.c1 * d.h1 * d.w1],
                    pool1: vec![0.0; d.c1 * d.ph1 * d.pw1],
                    arg1: vec![0; d.c1 * d.ph1 * d.pw1],
                    act2: vec![0.0; d.c2 * d.h2 * d.w2],
                    pool2: vec![0.0; d.features()],
                    arg2: vec![0; d.features()],
                    logit: 0.0,
                }
            }
        })
    }

    fn fits(&self, spec: &ModelSpec) -> bool {
        match (self, spec.kind) {
            (ForwardTrace::Linear { input, .. }, ModelKind::Linear) => input.len() == spec.height * spec.width,
            (ForwardTrace::TinyCnn { input, act2, .. }, ModelKind::TinyCnn) => spec
                .dims()
                .is_ok_and(|d| input.len() == d.h * d.w && act2.len() == d.c2 * d.h2 * d.w2),
            _ => false,
        }
    }

    pub fn logit(&self) -> f64 {
        match self {
            ForwardTrace::Linear { logit, .. } | ForwardTrace::TinyCnn { logit, .. } => *logit,
        }
    }

    /// ReLU on/off states and pooling winners. Two inputs with equal
    /// signatures lie in the same linear region of the network.
    pub fn activation_signature(&self) -> Vec<u32> {
        match self {
            ForwardTrace::Linear { .. } => Vec::new(),
            ForwardTrace::TinyCnn {
                act1, arg1, act2, arg2, ..
            } => act1
                .iter()
                .map(|a| u32::from(*a > 0.0))
                .chain(arg1.iter().copied())
                .chain(act2.iter().map(|a| u32::from(*a > 0.0)))
                .chain(arg2.iter().copied())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Plain,
    Guided,
}

/// Reusable buffers for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BackwardScratch {
    d_act2: Vec<f64>,
    d_pool1: Vec<f64>,
    d_act1: Vec<f64>,
}

impl BackwardScratch {
    pub(crate) fn new(spec: &ModelSpec) -> Result<Self> {
        Ok(match spec.kind {
            ModelKind::Linear => Self {
                d_act2: Vec::new(),
                d_pool1: Vec::new(),
                d_act1: Vec::new(),
            },
            ModelKind::TinyCnn => {
                let d = spec.dims()?;
                Self {
                    d_act2: vec![0.0; d.c2 * d.h2 * d.w2],
                    d_pool1: vec![0.0; d.c1 * d.ph1 * d.pw1],
                    d_act1: vec![0.0; d.c1 * d.h1 * d.w1],
                }
            }
        })
    }
}

// storage order of TinyCnn parameters
const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const FC_W: usize = 4;
const FC_B: usize = 5;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl TrainedClassifier {
    pub fn from_parameters(spec: ModelSpec, params: Parameters) -> Result<Self> {
        spec.validate()?;
        let params = Parameters::new(&spec, params.entries)?;
        Ok(Self {
            spec,
            params,
            val_auc: None,
            history: Vec::new(),
        })
    }

    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            params: Parameters::zeros(&spec),
            spec,
            val_auc: None,
            history: Vec::new(),
        })
    }

    /// He-uniform convolution weights, `1/sqrt(fan_in)` uniform for dense
    /// weights, zero biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        let mut rng: Rng = stream(seed, &["init".into()]);
        for (name, tensor) in model.params.entries.iter_mut() {
            if name.ends_with(".bias") {
                continue;
            }
            let shape = tensor.shape().to_vec();
            let fan_in: usize = shape[1..].iter().product();
            let bound = if name.starts_with("conv") {
                (6.0 / fan_in as f64).sqrt()
            } else {
                1.0 / (fan_in as f64).sqrt()
            };
            for v in tensor.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn parameters(&self) -> &Parameters {
        &self.params
    }

    pub(crate) fn parameters_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub(crate) fn new_trace(&self) -> Result<ForwardTrace> {
        ForwardTrace::empty(&self.spec)
    }

    fn check_input(&self, image: &ImageGrid) -> Result<()> {
        if image.height() != self.spec.height || image.width() != self.spec.width {
            return Err(Error::shape(
                format!("{}x{}", self.spec.height, self.spec.width),
                format!("{}x{}", image.height(), image.width()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, image: &ImageGrid) -> Result<(f64, ForwardTrace)> {
        self.check_input(image)?;
        let mut trace = self.new_trace()?;
        self.forward_into(image.values(), &mut trace);
        let logit = trace.logit();
        if !logit.is_finite() {
            return Err(Error::Numerical {
                msg: "non-finite logit".into(),
                condition: f64::INFINITY,
            });
        }
        Ok((logit, trace))
    }

    /// Logit only; reuses a per-thread trace instead of allocating one.
    pub fn logit(&self, image: &ImageGrid) -> Result<f64> {
        thread_local! {
            static TRACE: RefCell<Option<ForwardTrace>> = const { RefCell::new(None) };
        }
        self.check_input(image)?;
        let logit = TRACE.with(|cell| -> Result<f64> {
            let mut slot = cell.borrow_mut();
            if !slot.as_ref().is_some_and(|t| t.fits(&self.spec)) {
                *slot = Some(self.new_trace()?);
            }
            let trace = slot.as_mut().expect("trace just set");
            self.forward_into(image.values(), trace);
            Ok(trace.logit())
        })?;
        if !logit.is_finite() {
            return Err(Error::Numerical {
                msg: "non-finite logit".into(),
                condition: f64::INFINITY,
            });
        }
        Ok(logit)
    }

    pub fn predict_prob(&self, image: &ImageGrid) -> Result<f64> {
        self.logit(image).map(sigmoid)
    }

    /// Predicted class: 1 iff probability exceeds `threshold`.
    pub fn predict_class(&self, image: &ImageGrid, threshold: f64) -> Result<u8> {
        self.predict_prob(image).map(|p| u8::from(p > threshold))
    }

    /// Forward pass into preallocated buffers; `input` must match the spec.
    pub(crate) fn forward_into(&self, x: &[f64], trace: &mut ForwardTrace) {
        let p = &self.params;
        match trace {
            ForwardTrace::Linear { input, logit } => {
                input.copy_from_slice(x);
                let w = p.slot(0);
                *logit = p.slot(1)[0] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            ForwardTrace::TinyCnn {
                input,
                act1,
                pool1,
                arg1,
                act2,
                pool2,
                arg2,
                logit,
            } => {
                let d = self.spec.dims().expect("validated spec");
                input.copy_from_slice(x);
                layers::conv_forward(input, (1, d.h, d.w), p.slot(CONV1_W), p.slot(CONV1_B), act1);
                layers::relu_inplace(act1);
                layers::maxpool_forward(act1, (d.c1, d.h1, d.w1), pool1, arg1);
                layers::conv_forward(pool1, (d.c1, d.ph1, d.pw1), p.slot(CONV2_W), p.slot(CONV2_B), act2);
                layers::relu_inplace(act2);
                layers::maxpool_forward(act2, (d.c2, d.h2, d.w2), pool2, arg2);
                *logit = p.slot(FC_B)[0] + p.slot(FC_W).iter().zip(pool2.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }

    /// Backpropagates `upstream = dL/dlogit`. Parameter gradients are
    /// accumulated into `param_grads` (same layout as the parameters) and
    /// the input gradient is written to `d_input` when requested.
    pub(crate) fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: f64,
        mode: GradMode,
        scratch: &mut BackwardScratch,
        mut param_grads: Option<&mut [Vec<f64>]>,
        d_input: Option<&mut [f64]>,
    ) {
        let p = &self.params;
        let guided = mode == GradMode::Guided;
        match trace {
            ForwardTrace::Linear { input, .. } => {
                if let Some(g) = param_grads {
                    for (gw, x) in g[0].iter_mut().zip(input) {
                        *gw += upstream * x;
                    }
                    g[1][0] += upstream;
                }
                if let Some(dx) = d_input {
                    for (d, w) in dx.iter_mut().zip(p.slot(0)) {
                        *d = upstream * w;
                    }
                }
            }
            ForwardTrace::TinyCnn {
                input,
                act1,
                pool1,
                arg1,
                act2,
                pool2,
                arg2,
                ..
            } => {
                let d = self.spec.dims().expect("validated spec");
                // fc
                let d_pool2: Vec<f64> = p.slot(FC_W).iter().map(|w| upstream * w).collect();
                if let Some(g) = param_grads.as_deref_mut() {
                    for (gw, a) in g[FC_W].iter_mut().zip(pool2) {
                        *gw += upstream * a;
                    }
                    g[FC_B][0] += upstream;
                }
                // pool2 + relu2
                layers::maxpool_backward(&d_pool2, arg2, &mut scratch.d_act2);
                layers::relu_backward(act2, &mut scratch.d_act2, guided);
                // conv2
                scratch.d_pool1.fill(0.0);
                let conv2_grads = param_grads.as_deref_mut().map(|g| {
                    let (lo, hi) = g.split_at_mut(CONV2_B);
                    (lo[CONV2_W].as_mut_slice(), hi[0].as_mut_slice())
                });
                layers::conv_backward(
                    pool1,
                    (d.c1, d.ph1, d.pw1),
                    p.slot(CONV2_W),
                    &scratch.d_act2,
                    d.c2,
                    conv2_grads,
                    Some(&mut scratch.d_pool1),
                );
                // pool1 + relu1
                layers::maxpool_backward(&scratch.d_pool1, arg1, &mut scratch.d_act1);
                layers::relu_backward(act1, &mut scratch.d_act1, guided);
                // conv1
                let conv1_grads = param_grads.map(|g| {
                    let (lo, hi) = g.split_at_mut(CONV1_B);
                    (lo[CONV1_W].as_mut_slice(), hi[0].as_mut_slice())
                });
                let mut d_input = d_input;
                if let Some(dx) = d_input.as_deref_mut() {
                    dx.fill(0.0);
                }
                if conv1_grads.is_some() || d_input.is_some() {
                    layers::conv_backward(
                        input,
                        (1, d.h, d.w),
                        p.slot(CONV1_W),
                        &scratch.d_act1,
                        d.c1,
                        conv1_grads,
                        d_input,
                    );
                }
            }
        }
    }

    fn input_grad(&self, image: &ImageGrid, mode: GradMode) -> Result<Vec<f64>> {
        let (_, trace) = self.forward(image)?;
        let mut scratch = BackwardScratch::new(&self.spec)?;
        let mut dx = vec![0.0; image.len()];
        self.backward(&trace, 1.0, mode, &mut scratch, None, Some(&mut dx));
        Ok(dx)
    }

    /// `d logit / d x` for every pixel.
    pub fn input_gradient(&self, image: &ImageGrid) -> Result<Vec<f64>> {
        self.input_grad(image, GradMode::Plain)
    }

    /// Guided backpropagation: ReLU backward also blocks negative gradients.
    pub fn guided_input_gradient(&self, image: &ImageGrid) -> Result<Vec<f64>> {
        self.input_grad(image, GradMode::Guided)
    }

    /// Last convolutional block output and `d logit / d features`.
    pub fn gradcam_ingredients(&self, image: &ImageGrid) -> Result<(Tensor, Tensor)> {
        let shape = self.spec.feature_shape()?.to_vec();
        let (_, trace) = self.forward(image)?;
        let ForwardTrace::TinyCnn { pool2, .. } = trace else {
            return Err(Error::Internal("trace kind does not match spec".into()));
        };
        // features feed the dense head directly, so their gradient is the
        // dense weight vector
        let grads = self.params.slot(FC_W).to_vec();
        Ok((Tensor::new(shape.clone(), pool2)?, Tensor::new(shape, grads)?))
    }

    /// Logit computed from given last-block features (the dense head only).
    pub fn logit_from_features(&self, features: &Tensor) -> Result<f64> {
        let shape = self.spec.feature_shape()?;
        if features.shape() != shape {
            return Err(Error::shape(format!("{shape:?}"), format!("{:?}", features.shape())));
        }
        Ok(self.params.slot(FC_B)[0]
            + self
                .params
                .slot(FC_W)
                .iter()
                .zip(features.data())
                .map(|(a, b)| a * b)
                .sum::<f64>())
    }

    /// Gradient of the logit with respect to every parameter, same layout as
    /// [`Parameters::entries`].
    pub fn parameter_gradient(&self, image: &ImageGrid) -> Result<Vec<Vec<f64>>> {
        let (_, trace) = self.forward(image)?;
        let mut scratch = BackwardScratch::new(&self.spec)?;
        let mut grads = self.zero_grads();
        self.backward(&trace, 1.0, GradMode::Plain, &mut scratch, Some(&mut grads), None);
        Ok(grads)
    }

    pub(crate) fn zero_grads(&self) -> Vec<Vec<f64>> {
        (0..self.params.len())
            .map(|i| vec![0.0; self.params.slot(i).len()])
            .collect()
    }
}
