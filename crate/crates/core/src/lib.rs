//! Skeleton action recognition with a cascaded transformer pair.
//!
//! The crate is organized in four layers:
//!
//! - [`nn`]: a small deterministic tensor engine with reverse-mode autodiff,
//!   the attention/convolution/normalization kernels the model needs,
//!   optimizers, and a finite-difference gradient checker.
//! - [`data`]: skeleton clip containers, the binary dataset format,
//!   preprocessing (padding, frame sampling, normalization, augmentation,
//!   person selection, bone features), and a synthetic corpus generator.
//! - [`model`]: the cascaded architecture. A feature extractor embeds
//!   skeleton frames, a temporal backbone is pretrained to reconstruct
//!   masked joints, and a second transformer plus cross-attention fusion and
//!   a linear head classify actions.
//! - [`training`]: masking, pretraining and finetuning loops, freeze
//!   policies, evaluation, metrics logging, and checkpoint io.

pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use rng::Rng;
