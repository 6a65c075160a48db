//! Model configuration, masking specs, and the CascadeFormer network.

mod cascade;
mod config;
mod mask;

pub use cascade::{CascadeFormerModel, ParamGroup, LAYER_NORM_EPS};
pub use config::{DecoderKind, ModelConfig, PositionalEncoding, Variant};
pub use mask::{expand_frame_validity, make_mask, MaskMode, MaskSpec};
