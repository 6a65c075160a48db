//! Run configuration for both training stages plus parameter freezing.

use crate::error::{Error, Result};
use crate::model::{CascadeFormerModel, MaskMode, ParamGroup};
use crate::nn::{OptimizerHyper, OptimizerKind, Real, Schedule};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Masked-pretraining stage configuration. The optimizer is supplied by the
/// caller alongside its state so resumed runs keep their buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub schedule: Schedule,
    pub mask_mode: MaskMode,
    pub mask_ratio: f64,
    pub seed: u64,
    /// JSONL metrics destination; `None` disables the log.
    pub metrics_path: Option<PathBuf>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 1,
            batch_size: 16,
            base_lr: 1e-4,
            min_lr: 0.0,
            schedule: Schedule::Constant,
            mask_mode: MaskMode::Joint,
            mask_ratio: 0.3,
            seed: 0,
            metrics_path: None,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("pretrain epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        validate_lr(self.base_lr, self.min_lr)?;
        if self.mask_mode != MaskMode::None
            && !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0)
        {
            return Err(Error::Config(format!(
                "mask_ratio must be in (0, 1] for mode {}, got {}",
                self.mask_mode, self.mask_ratio
            )));
        }
        Ok(())
    }
}

/// Which pretrained parameters stay trainable during finetuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    /// Every pretrained parameter (extractor and all of T1) stays trainable.
    None,
    /// Extractor and T1 frozen at their pretrained values.
    All,
    /// Only T1's final encoder layer trains among the pretrained parts.
    LastLayer,
}

impl std::fmt::Display for FreezePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FreezePolicy::None => "none",
            FreezePolicy::All => "all",
            FreezePolicy::LastLayer => "last_layer",
        })
    }
}

/// Cascading-finetune stage configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub optimizer: OptimizerHyper,
    pub base_lr: f64,
    pub min_lr: f64,
    pub schedule: Schedule,
    pub freeze: FreezePolicy,
    pub seed: u64,
    pub metrics_path: Option<PathBuf>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 1,
            batch_size: 16,
            optimizer: OptimizerHyper::adamw(0.01),
            base_lr: 1e-5,
            min_lr: 0.0,
            schedule: Schedule::Cosine,
            freeze: FreezePolicy::None,
            seed: 0,
            metrics_path: None,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("finetune epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        validate_lr(self.base_lr, self.min_lr)?;
        let h = &self.optimizer;
        let unit = |v: f64| (0.0..1.0).contains(&v);
        let ok = match h.kind {
            OptimizerKind::AdamW => unit(h.beta1) && unit(h.beta2) && h.eps > 0.0,
            OptimizerKind::Sgd => unit(h.momentum),
        } && h.weight_decay >= 0.0
            && h.weight_decay.is_finite();
        if !ok {
            return Err(Error::Config(format!("invalid optimizer hyperparameters: {h:?}")));
        }
        Ok(())
    }
}

fn validate_lr(base_lr: f64, min_lr: f64) -> Result<()> {
    if !(base_lr.is_finite() && base_lr > 0.0) {
        return Err(Error::Config(format!("base_lr must be positive and finite, got {base_lr}")));
    }
    if !(min_lr.is_finite() && (0.0..=base_lr).contains(&min_lr)) {
        return Err(Error::Config(format!(
            "min_lr must satisfy 0 <= min_lr <= base_lr, got {min_lr} vs {base_lr}"
        )));
    }
    Ok(())
}

/// Per-parameter trainability for finetuning. The task encoder,
/// cross-attention, and classifier always train; the reconstruction decoder
/// never does (it is not part of the finetune graph); the policy decides the
/// extractor and T1 layers.
pub fn apply_freeze_policy<F: Real>(
    model: &CascadeFormerModel<F>,
    policy: FreezePolicy,
) -> Vec<bool> {
    let last = model.config().t1_layers - 1;
    model
        .param_groups()
        .iter()
        .map(|group| match group {
            ParamGroup::T2Layer(_) | ParamGroup::Cross | ParamGroup::Classifier => true,
            ParamGroup::Decoder => false,
            ParamGroup::Extractor => policy == FreezePolicy::None,
            ParamGroup::T1Layer(i) => match policy {
                FreezePolicy::None => true,
                FreezePolicy::All => false,
                FreezePolicy::LastLayer => *i == last,
            },
        })
        .collect()
}
