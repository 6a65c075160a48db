//! `synth` command behavior: stratified output, determinism, validation,
//! and the run manifest.

mod common;

use common::{run_err, run_ok};
use cascadeformer_core::data::load_dataset;

#[test]
fn writes_dataset_with_per_class_counts_and_holdout() {
    let dir = tempfile::tempdir().expect("tempdir");
    let (stdout, _) = run_ok(
        dir.path(),
        &[
            "synth",
            "--classes",
            "4",
            "--clips-per-class",
            "10",
            "--frames",
            "6",
            "--joints",
            "5",
            "--out",
            "train.skl",
            "--holdout-frac",
            "0.2",
            "--holdout-out",
            "test.skl",
        ],
    );
    assert!(stdout.contains("wrote 32 clips"), "stdout: {stdout}");
    assert!(stdout.contains("held out 8 clips"), "stdout: {stdout}");

    let train = load_dataset(&dir.path().join("train.skl")).expect("load train");
    let holdout = load_dataset(&dir.path().join("test.skl")).expect("load holdout");
    assert_eq!(train.class_counts(), vec![8, 8, 8, 8]);
    assert_eq!(holdout.class_counts(), vec![2, 2, 2, 2]);
    assert_eq!(train.joint_count, 5);
    assert_eq!(train.coords, 2);
    assert_eq!(train.class_names, holdout.class_names);
}

#[test]
fn same_flags_produce_byte_identical_datasets() {
    let dir = tempfile::tempdir().expect("tempdir");
    for out in ["a.skl", "b.skl"] {
        run_ok(
            dir.path(),
            &[
                "synth",
                "--classes",
                "3",
                "--clips-per-class",
                "4",
                "--frames",
                "7",
                "--joints",
                "6",
                "--seed",
                "11",
                "--out",
                out,
            ],
        );
    }
    let a_bytes = std::fs::read(dir.path().join("a.skl")).expect("read a");
    let b_bytes = std::fs::read(dir.path().join("b.skl")).expect("read b");
    assert_eq!(a_bytes, b_bytes);
}

#[test]
fn rejects_unsupported_coordinate_count() {
    let dir = tempfile::tempdir().expect("tempdir");
    let (code, stderr) = run_err(
        dir.path(),
        &[
            "synth",
            "--classes",
            "2",
            "--clips-per-class",
            "2",
            "--dims",
            "4",
            "--out",
            "x.skl",
        ],
    );
    assert_eq!(code, 1);
    assert!(stderr.starts_with("error: "), "stderr: {stderr}");
    assert!(stderr.contains("2 or 3"), "stderr: {stderr}");
    assert_eq!(stderr.lines().count(), 1, "stderr: {stderr}");
}

#[test]
fn holdout_flags_must_come_together() {
    let dir = tempfile::tempdir().expect("tempdir");
    let (code, stderr) = run_err(
        dir.path(),
        &[
            "synth",
            "--classes",
            "2",
            "--clips-per-class",
            "2",
            "--out",
            "x.skl",
            "--holdout-frac",
            "0.2",
        ],
    );
    assert_eq!(code, 2, "clap usage errors exit 2: {stderr}");
    assert!(stderr.contains("--holdout-out"), "stderr: {stderr}");
}

#[test]
fn manifest_records_config_and_artifacts() {
    let dir = tempfile::tempdir().expect("tempdir");
    run_ok(
        dir.path(),
        &[
            "synth",
            "--classes",
            "2",
            "--clips-per-class",
            "3",
            "--seed",
            "9",
            "--out",
            "d.skl",
        ],
    );
    let body = std::fs::read_to_string(dir.path().join("d.skl.run.json")).expect("manifest");
    let manifest: serde_json::Value = serde_json::from_str(&body).expect("parse manifest");
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config"]["classes"], 2);
    assert_eq!(manifest["config"]["clips_per_class"], 3);
    assert_eq!(manifest["artifacts"]["dataset"], "d.skl");
    assert!(manifest["finished_unix_ms"].as_u64() >= manifest["started_unix_ms"].as_u64());
}
