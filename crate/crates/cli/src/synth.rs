//! `synth`: deterministic synthetic corpus generation, with an optional
//! stratified holdout split written as a second dataset.

use crate::manifest::{artifact_map, manifest_path, unix_ms, write_manifest, RunManifest};
use anyhow::{bail, Context, Result};
use cascadeformer_core::data::{generate_synthetic, save_dataset, split_holdout, Dataset};
use serde_json::json;
use std::path::PathBuf;

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Number of action classes.
    #[arg(long)]
    pub classes: usize,

    /// Clips generated per class.
    #[arg(long)]
    pub clips_per_class: usize,

    /// Frames per clip.
    #[arg(long, default_value_t = 32)]
    pub frames: usize,

    /// Joints per skeleton.
    #[arg(long, default_value_t = 13)]
    pub joints: usize,

    /// Coordinates per joint (2 or 3).
    #[arg(long, default_value_t = 2)]
    pub dims: usize,

    /// Standard deviation of per-coordinate Gaussian noise.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,

    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    /// Output dataset path.
    #[arg(long)]
    pub out: PathBuf,

    /// Fraction of each class moved to a holdout dataset.
    #[arg(long, requires = "holdout_out")]
    pub holdout_frac: Option<f64>,

    /// Holdout dataset path.
    #[arg(long, requires = "holdout_frac")]
    pub holdout_out: Option<PathBuf>,
}

fn print_counts(dataset: &Dataset) {
    let counts = dataset.class_counts();
    let width = dataset
        .class_names
        .iter()
        .map(|n| n.len())
        .max()
        .unwrap_or(0);
    for (name, count) in dataset.class_names.iter().zip(counts) {
        println!("  {name:<width$}  {count}");
    }
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let started = unix_ms();
    let full = generate_synthetic(
        args.classes,
        args.clips_per_class,
        args.frames,
        args.joints,
        args.dims,
        args.noise,
        args.seed,
    )?;

    let mut artifacts = vec![("dataset", args.out.as_path())];
    match (&args.holdout_frac, &args.holdout_out) {
        (Some(frac), Some(holdout_out)) => {
            let (train, holdout) = split_holdout(&full, *frac, args.seed)?;
            save_dataset(&train, &args.out)
                .with_context(|| format!("writing {}", args.out.display()))?;
            save_dataset(&holdout, holdout_out)
                .with_context(|| format!("writing {}", holdout_out.display()))?;
            println!("wrote {} clips to {}", train.clips.len(), args.out.display());
            print_counts(&train);
            println!(
                "held out {} clips to {}",
                holdout.clips.len(),
                holdout_out.display()
            );
            print_counts(&holdout);
            artifacts.push(("holdout", holdout_out.as_path()));
        }
        (None, None) => {
            save_dataset(&full, &args.out)
                .with_context(|| format!("writing {}", args.out.display()))?;
            println!("wrote {} clips to {}", full.clips.len(), args.out.display());
            print_counts(&full);
        }
        // clap's `requires` links enforce the pairing before we get here.
        _ => bail!("--holdout-frac and --holdout-out must be given together"),
    }

    let manifest = RunManifest {
        command: "synth".into(),
        config: json!({
            "classes": args.classes,
            "clips_per_class": args.clips_per_class,
            "frames": args.frames,
            "joints": args.joints,
            "dims": args.dims,
            "noise": args.noise,
            "seed": args.seed,
            "holdout_frac": args.holdout_frac,
        }),
        seed: args.seed,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        artifacts: artifact_map(&artifacts),
    };
    write_manifest(&manifest, &manifest_path(&args.out))
}
