//! `ablate`: a three-row grid over one configuration axis. Every row is an
//! independent pretrain + finetune + holdout evaluation with the same seed
//! and the same data split, so rows differ in exactly the ablated setting.

use crate::manifest::{artifact_map, unix_ms, write_manifest, RunManifest};
use anyhow::{Context, Result};
use cascadeformer_core::data::{load_dataset, split_holdout, Dataset};
use cascadeformer_core::model::{
    CascadeFormerModel, DecoderKind, MaskMode, ModelConfig, PositionalEncoding, Variant,
};
use cascadeformer_core::nn::{OptimizerHyper, OptimizerState, Schedule};
use cascadeformer_core::training::{
    evaluate, finetune, pretrain, save_checkpoint, Checkpoint, FinetuneConfig, FreezePolicy,
    PretrainConfig, Stage,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    MaskStrategy,
    Decoder,
    Freeze,
    Representation,
}

impl Axis {
    fn slug(self) -> &'static str {
        match self {
            Axis::MaskStrategy => "mask-strategy",
            Axis::Decoder => "decoder",
            Axis::Freeze => "freeze",
            Axis::Representation => "representation",
        }
    }
}

pub fn parse_axis(s: &str) -> Result<Axis, String> {
    match s {
        "mask-strategy" => Ok(Axis::MaskStrategy),
        "decoder" => Ok(Axis::Decoder),
        "freeze" => Ok(Axis::Freeze),
        "representation" => Ok(Axis::Representation),
        other => Err(format!(
            "unknown axis {other:?} (expected mask-strategy, decoder, freeze, or representation)"
        )),
    }
}

/// Grid-wide settings, read from a JSON file; absent fields take these
/// defaults. The ablated axis overrides the matching field row by row.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseConfig {
    pub variant: Variant,
    pub embed_dim: usize,
    pub t1_layers: usize,
    pub t2_layers: usize,
    pub heads: usize,
    pub decoder: DecoderKind,
    pub conv_kernel: usize,
    pub st_heads: usize,
    pub mask_mode: MaskMode,
    pub mask_ratio: f64,
    pub freeze: FreezePolicy,
    pub pretrain_epochs: u64,
    pub finetune_epochs: u64,
    pub batch_size: usize,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for BaseConfig {
    fn default() -> Self {
        BaseConfig {
            variant: Variant::V1_0,
            embed_dim: 64,
            t1_layers: 2,
            t2_layers: 1,
            heads: 4,
            decoder: DecoderKind::Linear,
            conv_kernel: 3,
            st_heads: 1,
            mask_mode: MaskMode::Joint,
            mask_ratio: 0.3,
            freeze: FreezePolicy::None,
            pretrain_epochs: 50,
            finetune_epochs: 100,
            batch_size: 16,
            pretrain_lr: 1e-4,
            finetune_lr: 1e-5,
            holdout_frac: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct AblateArgs {
    /// Axis to ablate: mask-strategy, decoder, freeze, or representation.
    #[arg(long, value_parser = parse_axis)]
    pub axis: Axis,

    /// Dataset; a stratified holdout split provides the accuracy column.
    #[arg(long)]
    pub data: PathBuf,

    /// JSON file of grid-wide settings (missing fields take defaults).
    #[arg(long)]
    pub base_config: PathBuf,

    /// Directory for per-row artifacts and the result table.
    #[arg(long)]
    pub out_dir: PathBuf,
}

struct Row {
    value: String,
    base: BaseConfig,
}

/// The three rows of an axis: the base config with only that axis replaced.
fn axis_rows(axis: Axis, base: &BaseConfig) -> Vec<Row> {
    let with = |value: String, patch: &dyn Fn(&mut BaseConfig)| {
        let mut row = base.clone();
        patch(&mut row);
        Row { value, base: row }
    };
    match axis {
        Axis::MaskStrategy => [MaskMode::Joint, MaskMode::Frame, MaskMode::None]
            .iter()
            .map(|&m| with(m.to_string(), &|b| b.mask_mode = m))
            .collect(),
        Axis::Decoder => [DecoderKind::Linear, DecoderKind::Mlp, DecoderKind::MlpResidual]
            .iter()
            .map(|&d| with(d.to_string(), &|b| b.decoder = d))
            .collect(),
        Axis::Freeze => [FreezePolicy::None, FreezePolicy::All, FreezePolicy::LastLayer]
            .iter()
            .map(|&p| with(p.to_string(), &|b| b.freeze = p))
            .collect(),
        Axis::Representation => [Variant::V1_0, Variant::V1_1, Variant::V1_2]
            .iter()
            .map(|&v| with(v.to_string(), &|b| b.variant = v))
            .collect(),
    }
}

fn model_config(base: &BaseConfig, data: &Dataset) -> ModelConfig {
    ModelConfig {
        variant: base.variant,
        coords: data.coords,
        joints: data.joint_count,
        embed_dim: base.embed_dim,
        t1_layers: base.t1_layers,
        t2_layers: base.t2_layers,
        n_heads: base.heads,
        n_classes: data.class_count(),
        decoder: base.decoder,
        conv_kernel: base.conv_kernel,
        st_heads: base.st_heads,
        positional: PositionalEncoding::Sinusoidal,
    }
}

/// Serializes a training config with its `metrics_path` removed, so row
/// manifests differ only in genuinely configured values, never in artifact
/// paths.
fn strip_metrics<T: Serialize>(cfg: &T) -> Result<serde_json::Value> {
    let mut value = serde_json::to_value(cfg)?;
    if let Some(map) = value.as_object_mut() {
        map.remove("metrics_path");
    }
    Ok(value)
}

/// One full row: fresh model, pretrain, finetune, holdout evaluation.
/// Returns holdout accuracy.
fn run_row(axis: Axis, row: &Row, dir: &Path, train: &Dataset, holdout: &Dataset) -> Result<f64> {
    let started = unix_ms();
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let base = &row.base;
    let config = model_config(base, train);
    let mut model = CascadeFormerModel::<f32>::new(config.clone(), base.seed)?;

    let pre_ckpt = dir.join("pretrain.ckpt");
    let pre_cfg = PretrainConfig {
        epochs: base.pretrain_epochs,
        batch_size: base.batch_size,
        base_lr: base.pretrain_lr,
        min_lr: 0.0,
        schedule: Schedule::Constant,
        mask_mode: base.mask_mode,
        mask_ratio: base.mask_ratio,
        seed: base.seed,
        metrics_path: Some(dir.join("pretrain.metrics.jsonl")),
    };
    let mut optimizer = OptimizerState::new(OptimizerHyper::adamw(0.01), &model.param_shapes());
    pretrain(&mut model, &mut optimizer, train, &pre_cfg, 0, None)?;
    save_checkpoint(
        &Checkpoint {
            stage: Stage::Pretrain,
            seed: base.seed,
            epochs_completed: base.pretrain_epochs,
            model: model.clone(),
            optimizer: Some(optimizer),
        },
        &pre_ckpt,
    )?;

    let fine_ckpt = dir.join("finetune.ckpt");
    let fine_cfg = FinetuneConfig {
        epochs: base.finetune_epochs,
        batch_size: base.batch_size,
        optimizer: OptimizerHyper::adamw(0.01),
        base_lr: base.finetune_lr,
        min_lr: 0.0,
        schedule: Schedule::Cosine,
        freeze: base.freeze,
        seed: base.seed,
        metrics_path: Some(dir.join("finetune.metrics.jsonl")),
    };
    let mut optimizer = OptimizerState::new(fine_cfg.optimizer, &model.param_shapes());
    finetune(&mut model, &mut optimizer, train, &fine_cfg, 0, None)?;

    let accuracy = evaluate(&model, holdout, None)?.overall;
    save_checkpoint(
        &Checkpoint {
            stage: Stage::Finetune,
            seed: base.seed,
            epochs_completed: base.finetune_epochs,
            model,
            optimizer: Some(optimizer),
        },
        &fine_ckpt,
    )?;

    let manifest = RunManifest {
        command: "ablate-row".into(),
        config: json!({
            "axis": axis.slug(),
            "value": row.value,
            "model": config,
            "pretrain": strip_metrics(&pre_cfg)?,
            "finetune": strip_metrics(&fine_cfg)?,
            "holdout_frac": base.holdout_frac,
        }),
        seed: base.seed,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        artifacts: artifact_map(&[
            ("pretrain_checkpoint", pre_ckpt.as_path()),
            ("finetune_checkpoint", fine_ckpt.as_path()),
        ]),
    };
    write_manifest(&manifest, &dir.join("run.json"))?;
    Ok(accuracy)
}

pub fn run(args: &AblateArgs) -> Result<()> {
    let started = unix_ms();
    let body = std::fs::read_to_string(&args.base_config)
        .with_context(|| format!("reading {}", args.base_config.display()))?;
    let base: BaseConfig = serde_json::from_str(&body)
        .with_context(|| format!("parsing {}", args.base_config.display()))?;
    let full =
        load_dataset(&args.data).with_context(|| format!("loading {}", args.data.display()))?;
    let (train, holdout) = split_holdout(&full, base.holdout_frac, base.seed)?;

    let axis_dir = args.out_dir.join(args.axis.slug());
    let rows = axis_rows(args.axis, &base);
    let mut results: Vec<(String, f64, PathBuf)> = Vec::new();
    for row in &rows {
        let dir = axis_dir.join(&row.value);
        let accuracy = run_row(args.axis, row, &dir, &train, &holdout)?;
        results.push((row.value.clone(), accuracy, dir));
    }

    let width = results
        .iter()
        .map(|(value, _, _)| value.len())
        .max()
        .unwrap_or(0)
        .max("value".len());
    let mut table = format!("ablation over {} (seed {})\n\n", args.axis.slug(), base.seed);
    table.push_str(&format!("{:<width$}  holdout acc\n", "value"));
    for (value, accuracy, _) in &results {
        table.push_str(&format!(
            "{value:<width$}  {:>10.2}%\n",
            accuracy * 100.0
        ));
    }
    print!("{table}");

    let table_path = args.out_dir.join(format!("ablation_{}.txt", args.axis.slug()));
    std::fs::write(&table_path, &table)
        .with_context(|| format!("writing {}", table_path.display()))?;
    let json_path = args.out_dir.join(format!("ablation_{}.json", args.axis.slug()));
    let sidecar = json!({
        "axis": args.axis.slug(),
        "seed": base.seed,
        "rows": results
            .iter()
            .map(|(value, accuracy, dir)| json!({
                "value": value,
                "holdout_accuracy": accuracy,
                "dir": dir.display().to_string(),
            }))
            .collect::<Vec<_>>(),
    });
    std::fs::write(&json_path, serde_json::to_vec_pretty(&sidecar)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    println!("table {}", table_path.display());
    println!("json  {}", json_path.display());

    let manifest = RunManifest {
        command: "ablate".into(),
        config: json!({
            "axis": args.axis.slug(),
            "data": args.data.display().to_string(),
            "base": base,
        }),
        seed: base.seed,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        artifacts: artifact_map(&[
            ("table", table_path.as_path()),
            ("json", json_path.as_path()),
        ]),
    };
    write_manifest(
        &manifest,
        &args.out_dir.join(format!("ablation_{}.run.json", args.axis.slug())),
    )
}
