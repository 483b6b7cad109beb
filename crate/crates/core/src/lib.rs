//! Benchmark for checking whether attribution methods reveal a classifier's
//! reliance on spurious image features.
//!
//! The pipeline synthesizes a binary task with a controllable confounder
//! ([`synthgen`]), trains a small classifier ([`nnlite`]), explains
//! predictions on paired images with and without the confounder
//! ([`explain`]), scores the explanations ([`metrics`]) and sweeps the whole
//! thing over confounder type, contamination level and seed ([`harness`]).

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod explain;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod nnlite;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
pub use image::{ConfounderMask, ImageGrid};
