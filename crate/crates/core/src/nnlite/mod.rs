//! A small differentiable-model kit: tensors, a per-pixel linear classifier
//! and a two-block CNN with hand-derived backward passes, plain and guided
//! input gradients, Grad-CAM feature access, Adam training and checkpoints.

mod checkpoint;
mod layers;
mod model;
mod tensor;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use model::{sigmoid, EpochStats, ForwardTrace, GradMode, ModelKind, ModelSpec, Parameters, TrainedClassifier};
pub use tensor::Tensor;
pub use train::{auc_on, bce_with_logit, train, TrainConfig};
