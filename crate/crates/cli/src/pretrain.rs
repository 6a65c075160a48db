//! `pretrain`: masked-reconstruction training of a fresh backbone, saved as
//! a resumable checkpoint (model plus AdamW state).

use crate::flags::{metrics_path, parse_mask_mode, parse_schedule, ModelFlags};
use crate::manifest::{artifact_map, manifest_path, unix_ms, write_manifest, RunManifest};
use anyhow::{Context, Result};
use cascadeformer_core::data::load_dataset;
use cascadeformer_core::model::{CascadeFormerModel, MaskMode};
use cascadeformer_core::nn::{OptimizerHyper, OptimizerState, Schedule};
use cascadeformer_core::training::{pretrain, save_checkpoint, Checkpoint, PretrainConfig, Stage};
use serde_json::json;
use std::path::PathBuf;

const DEFAULT_MASK_RATIO: f64 = 0.3;

#[derive(Debug, clap::Args)]
pub struct PretrainArgs {
    /// Training dataset.
    #[arg(long)]
    pub data: PathBuf,

    #[command(flatten)]
    pub model: ModelFlags,

    #[arg(long, default_value_t = 50)]
    pub epochs: u64,

    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,

    /// Masking strategy: joint, frame, or none (full reconstruction).
    #[arg(long, value_parser = parse_mask_mode, default_value = "joint")]
    pub mask_mode: MaskMode,

    /// Fraction of valid positions masked per clip (default 0.3); ignored
    /// with --mask-mode none.
    #[arg(long)]
    pub mask_ratio: Option<f64>,

    /// Peak learning rate.
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,

    /// Schedule floor (cosine only).
    #[arg(long, default_value_t = 0.0)]
    pub min_lr: f64,

    /// Learning-rate schedule: constant or cosine.
    #[arg(long, value_parser = parse_schedule, default_value = "constant")]
    pub schedule: Schedule,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &PretrainArgs) -> Result<()> {
    let started = unix_ms();
    if args.mask_mode == MaskMode::None && args.mask_ratio.is_some() {
        eprintln!("warning: --mask-ratio is ignored with --mask-mode none");
    }
    let dataset =
        load_dataset(&args.data).with_context(|| format!("loading {}", args.data.display()))?;
    let model_config = args
        .model
        .to_config(dataset.coords, dataset.joint_count, dataset.class_count());
    let mut model = CascadeFormerModel::<f32>::new(model_config.clone(), args.seed)?;
    let mut optimizer = OptimizerState::new(OptimizerHyper::adamw(0.01), &model.param_shapes());

    let metrics = metrics_path(&args.out);
    let cfg = PretrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        base_lr: args.lr,
        min_lr: args.min_lr,
        schedule: args.schedule,
        mask_mode: args.mask_mode,
        mask_ratio: args.mask_ratio.unwrap_or(DEFAULT_MASK_RATIO),
        seed: args.seed,
        metrics_path: Some(metrics.clone()),
    };
    let records = pretrain(&mut model, &mut optimizer, &dataset, &cfg, 0, None)?;

    let checkpoint = Checkpoint {
        stage: Stage::Pretrain,
        seed: args.seed,
        epochs_completed: args.epochs,
        model,
        optimizer: Some(optimizer),
    };
    save_checkpoint(&checkpoint, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;

    let final_loss = records.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "pretrained {} epochs on {} clips; final loss {:.6}",
        args.epochs,
        dataset.clips.len(),
        final_loss
    );
    println!("checkpoint {}", args.out.display());

    let manifest = RunManifest {
        command: "pretrain".into(),
        config: json!({
            "data": args.data.display().to_string(),
            "model": model_config,
            "training": cfg,
        }),
        seed: args.seed,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        artifacts: artifact_map(&[
            ("checkpoint", args.out.as_path()),
            ("metrics", metrics.as_path()),
        ]),
    };
    write_manifest(&manifest, &manifest_path(&args.out))
}
