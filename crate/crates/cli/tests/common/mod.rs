//! Helpers for driving the compiled binary inside a scratch directory.

// Each test binary compiles this module separately and uses its own subset.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn cascadeformer(dir: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cascadeformer"));
    // A leaked metrics override would silently redirect every training run.
    cmd.env_remove("CASCADEFORMER_METRICS");
    cmd.current_dir(dir);
    cmd
}

pub fn output_text(output: &Output) -> (String, String) {
    (
        String::from_utf8_lossy(&output.stdout).into_owned(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

/// Runs to completion and asserts exit 0; returns (stdout, stderr).
pub fn run_ok(dir: &Path, args: &[&str]) -> (String, String) {
    let output = cascadeformer(dir).args(args).output().expect("spawn binary");
    let (stdout, stderr) = output_text(&output);
    assert!(
        output.status.success(),
        "expected success for {args:?}\nstdout:\n{stdout}\nstderr:\n{stderr}"
    );
    (stdout, stderr)
}

/// Runs and asserts a nonzero exit; returns (exit code, stderr).
pub fn run_err(dir: &Path, args: &[&str]) -> (i32, String) {
    let output = cascadeformer(dir).args(args).output().expect("spawn binary");
    let (stdout, stderr) = output_text(&output);
    assert!(
        !output.status.success(),
        "expected failure for {args:?}\nstdout:\n{stdout}\nstderr:\n{stderr}"
    );
    (output.status.code().unwrap_or(-1), stderr)
}

/// Tiny deterministic dataset for command tests: 2 classes, J=4, C=2.
pub fn tiny_dataset(dir: &Path, name: &str, clips_per_class: usize) {
    run_ok(
        dir,
        &[
            "synth",
            "--classes",
            "2",
            "--clips-per-class",
            &clips_per_class.to_string(),
            "--frames",
            "8",
            "--joints",
            "4",
            "--noise",
            "0.02",
            "--seed",
            "5",
            "--out",
            name,
        ],
    );
}
