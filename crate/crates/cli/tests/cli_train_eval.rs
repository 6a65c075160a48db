//! `pretrain`, `finetune`, and `eval` command flows at toy scale:
//! artifacts, determinism, validation errors, and the metrics override.

mod common;

use common::{run_err, run_ok, tiny_dataset};

const PRETRAIN_TINY: &[&str] = &[
    "pretrain",
    "--data",
    "train.skl",
    "--embed-dim",
    "16",
    "--t1-layers",
    "1",
    "--heads",
    "2",
    "--epochs",
    "2",
    "--batch-size",
    "4",
    "--seed",
    "1",
];

#[test]
fn pretrain_writes_checkpoint_metrics_and_manifest() {
    let dir = tempfile::tempdir().expect("tempdir");
    tiny_dataset(dir.path(), "train.skl", 6);
    let (stdout, _) = run_ok(dir.path(), &[PRETRAIN_TINY, &["--out", "pre.ckpt"]].concat());
    assert!(stdout.contains("pretrained 2 epochs"), "stdout: {stdout}");
    assert!(dir.path().join("pre.ckpt").exists());

    let metrics = std::fs::read_to_string(dir.path().join("pre.ckpt.metrics.jsonl"))
        .expect("metrics file");
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2, "one record per epoch");
    for (i, line) in lines.iter().enumerate() {
        let record: serde_json::Value = serde_json::from_str(line).expect("metrics line");
        assert_eq!(record["epoch"], i as u64);
        assert_eq!(record["split"], "pretrain");
        assert_eq!(record["accuracy"], serde_json::Value::Null);
        assert!(record["loss"].as_f64().expect("loss").is_finite());
    }

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("pre.ckpt.run.json")).expect("manifest"),
    )
    .expect("parse manifest");
    assert_eq!(manifest["command"], "pretrain");
    assert_eq!(manifest["config"]["model"]["embed_dim"], 16);
    assert_eq!(manifest["config"]["training"]["mask_mode"], "joint");
    assert_eq!(manifest["artifacts"]["checkpoint"], "pre.ckpt");
}

#[test]
fn pretrain_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().expect("tempdir");
    tiny_dataset(dir.path(), "train.skl", 6);
    run_ok(dir.path(), &[PRETRAIN_TINY, &["--out", "a.ckpt"]].concat());
    run_ok(dir.path(), &[PRETRAIN_TINY, &["--out", "b.ckpt"]].concat());
    let a = std::fs::read(dir.path().join("a.ckpt")).expect("read a");
    let b = std::fs::read(dir.path().join("b.ckpt")).expect("read b");
    assert_eq!(a, b, "checkpoints differ between identical runs");
    let am = std::fs::read(dir.path().join("a.ckpt.metrics.jsonl")).expect("metrics a");
    let bm = std::fs::read(dir.path().join("b.ckpt.metrics.jsonl")).expect("metrics b");
    assert_eq!(am, bm, "metrics logs differ between identical runs");
}

#[test]
fn mask_ratio_with_mode_none_warns_and_proceeds() {
    let dir = tempfile::tempdir().expect("tempdir");
    tiny_dataset(dir.path(), "train.skl", 4);
    let (_, stderr) = run_ok(
        dir.path(),
        &[
            PRETRAIN_TINY,
            &[
                "--mask-mode",
                "none",
                "--mask-ratio",
                "0.4",
                "--out",
                "pre.ckpt",
            ],
        ]
        .concat(),
    );
    assert!(
        stderr.contains("warning: --mask-ratio is ignored with --mask-mode none"),
        "stderr: {stderr}"
    );
}

#[test]
fn variant_1_2_requires_divisible_embed_dim() {
    let dir = tempfile::tempdir().expect("tempdir");
    tiny_dataset(dir.path(), "train.skl", 4);
    // J=4, embed 18: 18 % 4 != 0.
    let (code, stderr) = run_err(
        dir.path(),
        &[
            "pretrain",
            "--data",
            "train.skl",
            "--variant",
            "1.2",
            "--embed-dim",
            "18",
            "--t1-layers",
            "1",
            "--heads",
            "2",
            "--epochs",
            "1",
            "--out",
            "pre.ckpt",
        ],
    );
    assert_eq!(code, 1);
    assert!(stderr.contains("divisible"), "stderr: {stderr}");

    // Same variant with embed 16 constructs and trains.
    run_ok(
        dir.path(),
        &[
            "pretrain",
            "--data",
            "train.skl",
            "--variant",
            "1.2",
            "--embed-dim",
            "16",
            "--t1-layers",
            "1",
            "--heads",
            "2",
            "--epochs",
            "1",
            "--batch-size",
            "4",
            "--out",
            "pre12.ckpt",
        ],
    );
}

#[test]
fn finetune_requires_pretrained_or_from_scratch() {
    let dir = tempfile::tempdir().expect("tempdir");
    tiny_dataset(dir.path(), "train.skl", 4);
    let (code, stderr) = run_err(
        dir.path(),
        &["finetune", "--data", "train.skl", "--out", "fine.ckpt"],
    );
    assert_eq!(code, 2, "usage error: {stderr}");
    let first = stderr.lines().next().unwrap_or_default();
    assert!(first.starts_with("error:"), "stderr: {stderr}");

    let (code, _) = run_err(
        dir.path(),
        &[
            "finetune",
            "--pretrained",
            "pre.ckpt",
            "--from-scratch",
            "--data",
            "train.skl",
            "--out",
            "fine.ckpt",
        ],
    );
    assert_eq!(code, 2, "the two init flags conflict");
}

#[test]
fn finetune_then_eval_report_matches_stdout() {
    let dir = tempfile::tempdir().expect("tempdir");
    tiny_dataset(dir.path(), "train.skl", 6);
    run_ok(dir.path(), &[PRETRAIN_TINY, &["--out", "pre.ckpt"]].concat());
    let (stdout, _) = run_ok(
        dir.path(),
        &[
            "finetune",
            "--pretrained",
            "pre.ckpt",
            "--data",
            "train.skl",
            "--epochs",
            "3",
            "--batch-size",
            "4",
            "--lr",
            "1e-3",
            "--seed",
            "1",
            "--out",
            "fine.ckpt",
        ],
    );
    assert!(stdout.contains("finetuned 3 epochs"), "stdout: {stdout}");

    let groups = r#"{"everything": [0, 1]}"#;
    std::fs::write(dir.path().join("groups.json"), groups).expect("groups file");
    let (stdout, _) = run_ok(
        dir.path(),
        &[
            "eval",
            "--checkpoint",
            "fine.ckpt",
            "--data",
            "train.skl",
            "--groups",
            "groups.json",
        ],
    );
    assert!(stdout.contains("scored 12 clips"), "stdout: {stdout}");
    assert!(stdout.contains("group everything"), "stdout: {stdout}");

    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("fine.ckpt.eval.json")).expect("report"),
    )
    .expect("parse report");
    let overall = report["overall"].as_f64().expect("overall");
    let formatted = format!("{:.2}%", overall * 100.0);
    assert!(
        stdout.contains(&formatted),
        "stdout should show {formatted}: {stdout}"
    );
    assert_eq!(report["per_class"].as_array().expect("per_class").len(), 2);
    assert_eq!(report["groups"]["everything"], report["overall"]);
}

#[test]
fn eval_rejects_groups_naming_unknown_classes() {
    let dir = tempfile::tempdir().expect("tempdir");
    tiny_dataset(dir.path(), "train.skl", 4);
    run_ok(dir.path(), &[PRETRAIN_TINY, &["--out", "pre.ckpt"]].concat());
    std::fs::write(dir.path().join("groups.json"), r#"{"bad": [7]}"#).expect("groups file");
    let (code, stderr) = run_err(
        dir.path(),
        &[
            "eval",
            "--checkpoint",
            "pre.ckpt",
            "--data",
            "train.skl",
            "--groups",
            "groups.json",
        ],
    );
    assert_eq!(code, 1);
    assert!(stderr.contains("unknown class 7"), "stderr: {stderr}");
}

#[test]
fn finetune_rejects_mismatched_geometry() {
    let dir = tempfile::tempdir().expect("tempdir");
    tiny_dataset(dir.path(), "train.skl", 4);
    run_ok(dir.path(), &[PRETRAIN_TINY, &["--out", "pre.ckpt"]].concat());
    // Same classes, different joint count.
    run_ok(
        dir.path(),
        &[
            "synth",
            "--classes",
            "2",
            "--clips-per-class",
            "4",
            "--frames",
            "8",
            "--joints",
            "5",
            "--out",
            "wide.skl",
        ],
    );
    let (code, stderr) = run_err(
        dir.path(),
        &[
            "finetune",
            "--pretrained",
            "pre.ckpt",
            "--data",
            "wide.skl",
            "--epochs",
            "1",
            "--out",
            "fine.ckpt",
        ],
    );
    assert_eq!(code, 1);
    assert!(stderr.contains("J=5"), "stderr: {stderr}");
}

#[test]
fn metrics_env_var_overrides_the_default_path() {
    let dir = tempfile::tempdir().expect("tempdir");
    tiny_dataset(dir.path(), "train.skl", 4);
    let output = common::cascadeformer(dir.path())
        .args([PRETRAIN_TINY, &["--out", "pre.ckpt"]].concat())
        .env("CASCADEFORMER_METRICS", "custom.jsonl")
        .output()
        .expect("spawn binary");
    assert!(output.status.success());
    assert!(dir.path().join("custom.jsonl").exists());
    assert!(!dir.path().join("pre.ckpt.metrics.jsonl").exists());
}
