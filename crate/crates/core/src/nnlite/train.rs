//! Minibatch Adam on binary cross-entropy with best-validation-AUC selection.

use rand::seq::SliceRandom;

use super::model::{sigmoid, BackwardScratch, EpochStats, GradMode, ModelSpec, TrainedClassifier};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::metrics::roc_auc;
use crate::rng::stream;
use crate::synthgen::{Example, SplitDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Param("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch size must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Param("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Param("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

/// Numerically stable `BCE(sigmoid(z), y)`.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &TrainedClassifier) -> Self {
        Self {
            m: model.zero_grads(),
            v: model.zero_grads(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut TrainedClassifier, grads: &[Vec<f64>], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let params = model.parameters_mut();
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, g), m), v) in params.slot_mut(i).iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *w -= cfg.lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
            }
        }
    }
}

/// Probabilities and mean BCE of `model` over examples.
fn evaluate(model: &TrainedClassifier, examples: &[Example]) -> Result<(Vec<f64>, f64)> {
    let mut trace = model.new_trace()?;
    let mut probs = Vec::with_capacity(examples.len());
    let mut loss = 0.0;
    for ex in examples {
        model.forward_into(ex.image.values(), &mut trace);
        let z = trace.logit();
        loss += bce_with_logit(z, f64::from(ex.label));
        probs.push(sigmoid(z));
    }
    Ok((probs, loss / examples.len().max(1) as f64))
}

/// ROC AUC of `model` on a set of examples.
pub fn auc_on(model: &TrainedClassifier, examples: &[Example]) -> Result<f64> {
    let (probs, _) = evaluate(model, examples)?;
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    roc_auc(&probs, &labels)
}

fn check_shapes(spec: &ModelSpec, examples: &[Example]) -> Result<()> {
    let bad = |img: &ImageGrid| img.height() != spec.height || img.width() != spec.width;
    if let Some(ex) = examples.iter().find(|e| bad(&e.image)) {
        return Err(Error::shape(
            format!("{}x{}", spec.height, spec.width),
            format!("{}x{}", ex.image.height(), ex.image.width()),
        ));
    }
    Ok(())
}

/// Trains from a seeded initialization. Sequential over batches, so the
/// result is a pure function of `(spec, ds, cfg)`. Stops early once the
/// validation AUC is perfect; `history` lists the epochs actually run.
pub fn train(spec: ModelSpec, ds: &SplitDataset, cfg: &TrainConfig) -> Result<TrainedClassifier> {
    cfg.validate()?;
    spec.validate()?;
    if ds.train.is_empty() {
        return Err(Error::Dataset("empty training split".into()));
    }
    check_shapes(&spec, &ds.train)?;
    check_shapes(&spec, &ds.val)?;

    let mut model = TrainedClassifier::init(spec, cfg.seed)?;
    let mut adam = Adam::new(&model);
    let mut trace = model.new_trace()?;
    let mut scratch = BackwardScratch::new(&spec)?;
    let mut grads = model.zero_grads();
    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    let mut shuffle_rng = stream(cfg.seed, &["shuffle".into()]);

    let val_labels: Vec<u8> = ds.val.iter().map(|e| e.label).collect();
    let mut best: Option<(f64, TrainedClassifier)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &ds.train[i];
                model.forward_into(ex.image.values(), &mut trace);
                let z = trace.logit();
                let y = f64::from(ex.label);
                total += bce_with_logit(z, y);
                let upstream = (sigmoid(z) - y) * scale;
                model.backward(&trace, upstream, GradMode::Plain, &mut scratch, Some(&mut grads), None);
            }
            adam.step(&mut model, &grads, cfg);
        }
        let train_loss = total / ds.train.len() as f64;
        if !train_loss.is_finite() || !model.parameters().is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("loss {train_loss}"),
            });
        }

        let (val_auc, val_loss) = if ds.val.is_empty() {
            (None, f64::NAN)
        } else {
            let (probs, loss) = evaluate(&model, &ds.val)?;
            (roc_auc(&probs, &val_labels).ok(), loss)
        };
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_auc,
        });
        // higher is better; AUC when defined, otherwise negated validation
        // (or training) loss
        let score = val_auc.unwrap_or(if val_loss.is_finite() { -val_loss } else { -train_loss });
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            let mut snapshot = model.clone();
            snapshot.val_auc = val_auc;
            best = Some((score, snapshot));
        }
        // a perfect validation AUC can never be strictly beaten
        if val_auc == Some(1.0) {
            break;
        }
    }
    let (_, mut chosen) = best.expect("at least one epoch");
    chosen.history = history;
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_matches_direct_formula() {
        for (z, y) in [(0.3, 1.0), (-1.2, 0.0), (2.0, 0.0), (-0.5, 1.0)] {
            let p = sigmoid(z);
            let direct = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((bce_with_logit(z, y) - direct).abs() < 1e-12);
        }
        assert!(bce_with_logit(-1000.0, 1.0).is_finite());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
