//! Model architecture configuration and validation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How raw frames become frame tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Flatten each frame and project linearly.
    #[serde(rename = "v1_0")]
    V1_0,
    /// Convolve over joints first, then the v1.0 path.
    #[serde(rename = "v1_1")]
    V1_1,
    /// Embed each joint, mix with one spatial encoder layer, concatenate.
    #[serde(rename = "v1_2")]
    V1_2,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::V1_0 => "v1_0",
            Variant::V1_1 => "v1_1",
            Variant::V1_2 => "v1_2",
        })
    }
}

/// Reconstruction head used during pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Linear,
    Mlp,
    MlpResidual,
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Linear => "linear",
            DecoderKind::Mlp => "mlp",
            DecoderKind::MlpResidual => "mlp_residual",
        })
    }
}

/// Frame-order signal added after feature extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    Sinusoidal,
    None,
}

fn default_conv_kernel() -> usize {
    3
}

fn default_st_heads() -> usize {
    1
}

fn default_positional() -> PositionalEncoding {
    PositionalEncoding::Sinusoidal
}

/// Full architecture description; a validated config determines the
/// parameter set exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub coords: usize,
    pub joints: usize,
    pub embed_dim: usize,
    pub t1_layers: usize,
    pub t2_layers: usize,
    pub n_heads: usize,
    pub n_classes: usize,
    pub decoder: DecoderKind,
    /// Joint-axis convolution width (variant 1.1 only); must be odd.
    #[serde(default = "default_conv_kernel")]
    pub conv_kernel: usize,
    /// Heads of the spatial encoder layer (variant 1.2 only).
    #[serde(default = "default_st_heads")]
    pub st_heads: usize,
    #[serde(default = "default_positional")]
    pub positional: PositionalEncoding,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coords != 2 && self.coords != 3 {
            return Err(Error::Config(format!(
                "coordinate count must be 2 or 3, got {}",
                self.coords
            )));
        }
        for (n, what) in [
            (self.joints, "joints"),
            (self.embed_dim, "embed_dim"),
            (self.t1_layers, "t1_layers"),
            (self.t2_layers, "t2_layers"),
            (self.n_heads, "n_heads"),
            (self.n_classes, "n_classes"),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("{what} must be at least 1")));
            }
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.variant == Variant::V1_1 && self.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "conv_kernel must be odd for same-length output, got {}",
                self.conv_kernel
            )));
        }
        if self.variant == Variant::V1_2 {
            if !self.embed_dim.is_multiple_of(self.joints) {
                return Err(Error::Config(format!(
                    "variant v1_2 requires embed_dim divisible by the joint count: \
                     {} % {} != 0",
                    self.embed_dim, self.joints
                )));
            }
            let per_joint = self.embed_dim / self.joints;
            if self.st_heads == 0 || !per_joint.is_multiple_of(self.st_heads) {
                return Err(Error::Config(format!(
                    "per-joint width {per_joint} is not divisible by st_heads {}",
                    self.st_heads
                )));
            }
        }
        Ok(())
    }

    /// Width of each joint's embedding under variant 1.2.
    pub fn per_joint_dim(&self) -> usize {
        self.embed_dim / self.joints
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base() -> ModelConfig {
        ModelConfig {
            variant: Variant::V1_0,
            coords: 2,
            joints: 13,
            embed_dim: 104,
            t1_layers: 2,
            t2_layers: 1,
            n_heads: 4,
            n_classes: 4,
            decoder: DecoderKind::Linear,
            conv_kernel: 3,
            st_heads: 1,
            positional: PositionalEncoding::Sinusoidal,
        }
    }

    #[test]
    fn valid_configs_pass() {
        base().validate().unwrap();
        let mut v12 = base();
        v12.variant = Variant::V1_2;
        v12.validate().unwrap(); // 104 = 13 * 8
        v12.st_heads = 2;
        v12.validate().unwrap(); // 8 % 2 == 0
    }

    #[test]
    fn v1_2_divisibility_is_enforced() {
        let mut cfg = base();
        cfg.variant = Variant::V1_2;
        cfg.embed_dim = 128;
        cfg.n_heads = 4;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
        cfg.embed_dim = 104;
        cfg.st_heads = 3; // 8 % 3 != 0
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn head_divisibility_and_kernel_parity() {
        let mut cfg = base();
        cfg.n_heads = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = base();
        cfg.variant = Variant::V1_1;
        cfg.conv_kernel = 4;
        assert!(cfg.validate().is_err());
        cfg.conv_kernel = 5;
        cfg.validate().unwrap();
    }

    #[test]
    fn zero_counts_are_rejected() {
        for field in 0..6 {
            let mut cfg = base();
            match field {
                0 => cfg.joints = 0,
                1 => cfg.embed_dim = 0,
                2 => cfg.t1_layers = 0,
                3 => cfg.t2_layers = 0,
                4 => cfg.n_heads = 0,
                _ => cfg.n_classes = 0,
            }
            assert!(cfg.validate().is_err(), "field {field}");
        }
        let mut cfg = base();
        cfg.coords = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn serde_round_trip_with_defaults() {
        let cfg = base();
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"v1_0\""), "{json}");
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        // Optional fields fall back to defaults when absent.
        let sparse = r#"{
            "variant": "v1_2", "coords": 2, "joints": 4, "embed_dim": 8,
            "t1_layers": 1, "t2_layers": 1, "n_heads": 2, "n_classes": 3,
            "decoder": "mlp_residual"
        }"#;
        let cfg: ModelConfig = serde_json::from_str(sparse).unwrap();
        assert_eq!(cfg.conv_kernel, 3);
        assert_eq!(cfg.st_heads, 1);
        assert_eq!(cfg.positional, PositionalEncoding::Sinusoidal);
        assert_eq!(cfg.decoder, DecoderKind::MlpResidual);
    }
}
