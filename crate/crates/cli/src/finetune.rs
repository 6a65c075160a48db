//! `finetune`: cascade classification training, either on top of a
//! pretrained checkpoint or from random initialization.

use crate::flags::{metrics_path, parse_freeze, parse_optimizer, parse_schedule, ModelFlags};
use crate::manifest::{artifact_map, manifest_path, unix_ms, write_manifest, RunManifest};
use anyhow::{Context, Result};
use cascadeformer_core::data::load_dataset;
use cascadeformer_core::model::CascadeFormerModel;
use cascadeformer_core::nn::{OptimizerHyper, OptimizerState, Schedule};
use cascadeformer_core::training::{
    finetune, load_checkpoint, save_checkpoint, Checkpoint, FinetuneConfig, FreezePolicy, Stage,
};
use clap::ArgGroup;
use serde_json::json;
use std::path::PathBuf;

#[derive(Debug, clap::Args)]
#[command(group(ArgGroup::new("init").required(true).args(["pretrained", "from_scratch"])))]
pub struct FinetuneArgs {
    /// Pretraining checkpoint to build on.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,

    /// Train from random initialization instead; the model shape then comes
    /// from the model flags.
    #[arg(long)]
    pub from_scratch: bool,

    /// Training dataset.
    #[arg(long)]
    pub data: PathBuf,

    #[command(flatten)]
    pub model: ModelFlags,

    #[arg(long, default_value_t = 100)]
    pub epochs: u64,

    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,

    /// Peak learning rate.
    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,

    /// Schedule floor (cosine only).
    #[arg(long, default_value_t = 0.0)]
    pub min_lr: f64,

    /// Optimizer: adamw or sgd.
    #[arg(long, value_parser = parse_optimizer, default_value = "adamw")]
    pub optimizer: OptimizerHyper,

    /// Learning-rate schedule: constant or cosine.
    #[arg(long, value_parser = parse_schedule, default_value = "cosine")]
    pub schedule: Schedule,

    /// Pretrained-parameter freeze policy: none, all, or last-layer.
    #[arg(long, value_parser = parse_freeze, default_value = "none")]
    pub freeze: FreezePolicy,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &FinetuneArgs) -> Result<()> {
    let started = unix_ms();
    let dataset =
        load_dataset(&args.data).with_context(|| format!("loading {}", args.data.display()))?;

    let (mut model, init) = match &args.pretrained {
        Some(path) => {
            let loaded =
                load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            (loaded.model, json!({"pretrained": path.display().to_string()}))
        }
        None => {
            let config =
                args.model
                    .to_config(dataset.coords, dataset.joint_count, dataset.class_count());
            (
                CascadeFormerModel::<f32>::new(config, args.seed)?,
                json!({"from_scratch": true}),
            )
        }
    };
    let mut optimizer = OptimizerState::new(args.optimizer, &model.param_shapes());

    let metrics = metrics_path(&args.out);
    let cfg = FinetuneConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        optimizer: args.optimizer,
        base_lr: args.lr,
        min_lr: args.min_lr,
        schedule: args.schedule,
        freeze: args.freeze,
        seed: args.seed,
        metrics_path: Some(metrics.clone()),
    };
    let records = finetune(&mut model, &mut optimizer, &dataset, &cfg, 0, None)?;

    let model_config = model.config().clone();
    let checkpoint = Checkpoint {
        stage: Stage::Finetune,
        seed: args.seed,
        epochs_completed: args.epochs,
        model,
        optimizer: Some(optimizer),
    };
    save_checkpoint(&checkpoint, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;

    let last = records.last();
    println!(
        "finetuned {} epochs on {} clips; final loss {:.6}; train accuracy {:.2}%",
        args.epochs,
        dataset.clips.len(),
        last.map(|r| r.loss).unwrap_or(f64::NAN),
        last.and_then(|r| r.accuracy).unwrap_or(f64::NAN) * 100.0
    );
    println!("checkpoint {}", args.out.display());

    let manifest = RunManifest {
        command: "finetune".into(),
        config: json!({
            "data": args.data.display().to_string(),
            "init": init,
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
