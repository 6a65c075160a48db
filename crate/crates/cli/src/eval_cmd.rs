//! `eval`: score a checkpoint on a dataset, print an aligned accuracy table,
//! and write the same numbers as a JSON report.

use crate::manifest::{artifact_map, manifest_path, unix_ms, write_manifest, RunManifest};
use anyhow::{Context, Result};
use cascadeformer_core::data::load_dataset;
use cascadeformer_core::training::{evaluate, load_checkpoint};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Checkpoint to score.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Evaluation dataset.
    #[arg(long)]
    pub data: PathBuf,

    /// JSON file mapping group names to class-index lists, for grouped
    /// accuracy rows.
    #[arg(long)]
    pub groups: Option<PathBuf>,

    /// Report destination (default: `<checkpoint>.eval.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn default_report_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".eval.json");
    checkpoint.with_file_name(name)
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let started = unix_ms();
    let checkpoint = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let dataset =
        load_dataset(&args.data).with_context(|| format!("loading {}", args.data.display()))?;
    let groups: Option<BTreeMap<String, Vec<usize>>> = match &args.groups {
        Some(path) => {
            let body = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Some(serde_json::from_str(&body).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => None,
    };

    let report = evaluate(&checkpoint.model, &dataset, groups.as_ref())?;

    println!(
        "scored {} clips from {}",
        dataset.clips.len(),
        args.data.display()
    );
    let mut rows: Vec<(String, String)> = vec![("overall".into(), pct(report.overall))];
    for (name, acc) in dataset.class_names.iter().zip(&report.per_class) {
        rows.push((name.clone(), pct(*acc)));
    }
    for (name, acc) in &report.groups {
        rows.push((format!("group {name}"), pct(*acc)));
    }
    let width = rows.iter().map(|(name, _)| name.len()).max().unwrap_or(0);
    for (name, value) in &rows {
        println!("{name:<width$}  {value:>7}");
    }

    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| default_report_path(&args.checkpoint));
    let body = json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "data": args.data.display().to_string(),
        "clips": dataset.clips.len(),
        "class_names": dataset.class_names,
        "overall": report.overall,
        "per_class": report.per_class,
        "confusion": report.confusion,
        "groups": report.groups,
    });
    std::fs::write(&report_path, serde_json::to_vec_pretty(&body)?)
        .with_context(|| format!("writing {}", report_path.display()))?;
    println!("report {}", report_path.display());

    let manifest = RunManifest {
        command: "eval".into(),
        config: json!({
            "checkpoint": args.checkpoint.display().to_string(),
            "data": args.data.display().to_string(),
            "groups": groups,
        }),
        seed: checkpoint.seed,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        artifacts: artifact_map(&[("report", report_path.as_path())]),
    };
    write_manifest(&manifest, &manifest_path(&report_path))
}
