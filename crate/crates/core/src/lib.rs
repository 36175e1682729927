//! Volumetric classification with a hybrid compact convolutional transformer.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, kernels, and reverse-mode gradients.
//! - [`model`]: convolutional tokenizer, transformer encoder, hybrid pooling
//!   head, parameter accounting, and the checkpoint format.
//! - [`train`]: loss, AdamW, step-decay schedule, base training and
//!   fine-tuning with a frozen encoder.
//! - [`metrics`]: confusion matrices and weighted precision/recall/F1.
//! - [`data`]: the HVOL volume format, preprocessing, manifests, stratified
//!   splits, and a synthetic dataset generator.
//! - [`explain`]: attention-weighted saliency heatmaps and slice export.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod explain;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, RngState, Shape, Tensor};
