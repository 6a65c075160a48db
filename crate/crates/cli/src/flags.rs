//! Flag value parsers and the model-shape flag block shared by the commands
//! that construct a model from scratch.

use cascadeformer_core::model::{DecoderKind, MaskMode, ModelConfig, PositionalEncoding, Variant};
use cascadeformer_core::nn::{OptimizerHyper, Schedule};
use cascadeformer_core::training::FreezePolicy;

pub fn parse_variant(s: &str) -> Result<Variant, String> {
    match s {
        "1.0" => Ok(Variant::V1_0),
        "1.1" => Ok(Variant::V1_1),
        "1.2" => Ok(Variant::V1_2),
        other => Err(format!("unknown variant {other:?} (expected 1.0, 1.1, or 1.2)")),
    }
}

pub fn parse_decoder(s: &str) -> Result<DecoderKind, String> {
    match s {
        "linear" => Ok(DecoderKind::Linear),
        "mlp" => Ok(DecoderKind::Mlp),
        "mlp_residual" => Ok(DecoderKind::MlpResidual),
        other => Err(format!(
            "unknown decoder {other:?} (expected linear, mlp, or mlp_residual)"
        )),
    }
}

pub fn parse_mask_mode(s: &str) -> Result<MaskMode, String> {
    match s {
        "joint" => Ok(MaskMode::Joint),
        "frame" => Ok(MaskMode::Frame),
        "none" => Ok(MaskMode::None),
        other => Err(format!(
            "unknown mask mode {other:?} (expected joint, frame, or none)"
        )),
    }
}

pub fn parse_schedule(s: &str) -> Result<Schedule, String> {
    match s {
        "constant" => Ok(Schedule::Constant),
        "cosine" => Ok(Schedule::Cosine),
        other => Err(format!(
            "unknown schedule {other:?} (expected constant or cosine)"
        )),
    }
}

pub fn parse_freeze(s: &str) -> Result<FreezePolicy, String> {
    match s {
        "none" => Ok(FreezePolicy::None),
        "all" => Ok(FreezePolicy::All),
        "last-layer" => Ok(FreezePolicy::LastLayer),
        other => Err(format!(
            "unknown freeze policy {other:?} (expected none, all, or last-layer)"
        )),
    }
}

/// Optimizer rule with its conventional hyperparameters: AdamW with decoupled
/// weight decay 0.01, or SGD with momentum 0.9 and no decay.
pub fn parse_optimizer(s: &str) -> Result<OptimizerHyper, String> {
    match s {
        "adamw" => Ok(OptimizerHyper::adamw(0.01)),
        "sgd" => Ok(OptimizerHyper::sgd(0.9, 0.0)),
        other => Err(format!("unknown optimizer {other:?} (expected adamw or sgd)")),
    }
}

/// Model-shape flags. Joint count, coordinate count, and class count always
/// come from the dataset, never from flags.
#[derive(Debug, Clone, clap::Args)]
pub struct ModelFlags {
    /// Feature extraction variant: 1.0 (flatten+project), 1.1 (joint
    /// convolution first), or 1.2 (per-joint embedding + spatial attention).
    #[arg(long, value_parser = parse_variant, default_value = "1.0")]
    pub variant: Variant,

    /// Backbone embedding width.
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,

    /// Encoder layers in the pretrained backbone T1.
    #[arg(long, default_value_t = 2)]
    pub t1_layers: usize,

    /// Encoder layers in the finetuning transformer T2.
    #[arg(long, default_value_t = 1)]
    pub t2_layers: usize,

    /// Attention heads in every temporal attention block.
    #[arg(long, default_value_t = 4)]
    pub heads: usize,

    /// Reconstruction decoder: linear, mlp, or mlp_residual.
    #[arg(long, value_parser = parse_decoder, default_value = "linear")]
    pub decoder: DecoderKind,

    /// Joint-axis convolution width for variant 1.1 (odd).
    #[arg(long, default_value_t = 3)]
    pub conv_kernel: usize,

    /// Spatial attention heads for variant 1.2.
    #[arg(long, default_value_t = 1)]
    pub st_heads: usize,
}

impl ModelFlags {
    pub fn to_config(&self, coords: usize, joints: usize, n_classes: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            coords,
            joints,
            embed_dim: self.embed_dim,
            t1_layers: self.t1_layers,
            t2_layers: self.t2_layers,
            n_heads: self.heads,
            n_classes,
            decoder: self.decoder,
            conv_kernel: self.conv_kernel,
            st_heads: self.st_heads,
            positional: PositionalEncoding::Sinusoidal,
        }
    }
}

/// Metrics log destination: the `CASCADEFORMER_METRICS` environment variable
/// wins, otherwise a `.metrics.jsonl` sibling of the checkpoint.
pub fn metrics_path(out: &std::path::Path) -> std::path::PathBuf {
    if let Ok(path) = std::env::var("CASCADEFORMER_METRICS") {
        return std::path::PathBuf::from(path);
    }
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".metrics.jsonl");
    out.with_file_name(name)
}
