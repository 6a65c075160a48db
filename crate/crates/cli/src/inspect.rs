//! `inspect`: print checkpoint metadata, and optionally a per-group
//! parameter diff against a second checkpoint with the same layout.

use anyhow::{bail, Context, Result};
use cascadeformer_core::model::ParamGroup;
use cascadeformer_core::nn::OptimizerKind;
use cascadeformer_core::training::{load_checkpoint, Checkpoint};
use std::path::PathBuf;

#[derive(Debug, clap::Args)]
pub struct InspectArgs {
    /// Checkpoint to describe.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Second checkpoint to diff parameters against.
    #[arg(long)]
    pub diff: Option<PathBuf>,
}

fn group_label(group: ParamGroup) -> String {
    match group {
        ParamGroup::Extractor => "extractor".into(),
        ParamGroup::T1Layer(i) => format!("t1.{i}"),
        ParamGroup::Decoder => "decoder".into(),
        ParamGroup::T2Layer(i) => format!("t2.{i}"),
        ParamGroup::Cross => "cross".into(),
        ParamGroup::Classifier => "classifier".into(),
    }
}

fn print_summary(checkpoint: &Checkpoint) {
    let config = checkpoint.model.config();
    let rows: Vec<(&str, String)> = vec![
        ("stage", checkpoint.stage.to_string()),
        ("seed", checkpoint.seed.to_string()),
        ("epochs", checkpoint.epochs_completed.to_string()),
        ("variant", config.variant.to_string()),
        ("decoder", config.decoder.to_string()),
        ("embed_dim", config.embed_dim.to_string()),
        ("t1_layers", config.t1_layers.to_string()),
        ("t2_layers", config.t2_layers.to_string()),
        ("heads", config.n_heads.to_string()),
        ("joints", config.joints.to_string()),
        ("coords", config.coords.to_string()),
        ("classes", config.n_classes.to_string()),
        ("tensors", checkpoint.model.params().len().to_string()),
        ("values", checkpoint.model.param_count().to_string()),
        (
            "optimizer",
            match &checkpoint.optimizer {
                Some(state) => format!(
                    "{}, step {}",
                    match state.hyper.kind {
                        OptimizerKind::AdamW => "adamw",
                        OptimizerKind::Sgd => "sgd",
                    },
                    state.step
                ),
                None => "none".into(),
            },
        ),
    ];
    let width = rows.iter().map(|(name, _)| name.len()).max().unwrap_or(0);
    for (name, value) in rows {
        println!("{name:<width$}  {value}");
    }
}

pub fn run(args: &InspectArgs) -> Result<()> {
    let checkpoint = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    println!("checkpoint  {}", args.checkpoint.display());
    print_summary(&checkpoint);

    let Some(diff_path) = &args.diff else {
        return Ok(());
    };
    let other =
        load_checkpoint(diff_path).with_context(|| format!("loading {}", diff_path.display()))?;
    if checkpoint.model.param_names() != other.model.param_names() {
        bail!("checkpoints have different parameter layouts and cannot be diffed");
    }

    // (label, changed tensors, total tensors, max elementwise |difference|)
    // in canonical group order.
    let mut groups: Vec<(String, usize, usize, f64)> = Vec::new();
    let model = &checkpoint.model;
    for ((group, a), b) in model
        .param_groups()
        .iter()
        .zip(model.params())
        .zip(other.model.params())
    {
        let label = group_label(*group);
        if groups.last().map(|(l, ..)| l.as_str()) != Some(label.as_str()) {
            groups.push((label, 0, 0, 0.0));
        }
        let entry = groups.last_mut().expect("group row was just pushed");
        let delta = a.max_abs_diff(b);
        entry.1 += usize::from(delta > 0.0);
        entry.2 += 1;
        entry.3 = entry.3.max(delta);
    }

    println!();
    println!("diff vs {}", diff_path.display());
    let width = groups
        .iter()
        .map(|(label, ..)| label.len())
        .max()
        .unwrap_or(0)
        .max("group".len());
    println!("{:<width$}  changed  max |delta|", "group");
    for (label, changed, total, delta) in &groups {
        println!("{label:<width$}  {:>7}  {delta:.3e}", format!("{changed}/{total}"));
    }
    Ok(())
}
