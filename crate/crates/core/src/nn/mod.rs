//! Differentiable tensor engine: exactly the kernels the model needs,
//! reverse-mode gradients, optimizers, and a finite-difference checker.

pub mod grad_check;
pub mod graph;
mod linalg;
pub mod ops;
pub mod optim;
pub mod scalar;
pub mod tensor;

pub use grad_check::{grad_check, GradCheckReport};
pub use graph::{Graph, NodeId, PadMask};
pub use ops::{EncoderLayerIds, MhaIds};
pub use optim::{cosine_lr, lr_at, OptimizerHyper, OptimizerKind, OptimizerState, Schedule};
pub use scalar::{real, Real};
pub use tensor::Tensor;
