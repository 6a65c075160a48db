//! Run manifests: one JSON file per command invocation, written atomically
//! next to the command's primary artifact, carrying everything needed to
//! reproduce the run bit for bit (resolved config, seed, artifact paths).

use anyhow::{Context, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    /// Subcommand name, e.g. `"pretrain"`.
    pub command: String,
    /// Fully resolved configuration after defaults; reruns with these values
    /// reproduce the artifacts byte for byte.
    pub config: serde_json::Value,
    pub seed: u64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    /// Role -> path of every file the command wrote.
    pub artifacts: BTreeMap<String, String>,
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Conventional manifest location for a command whose primary artifact is
/// `out`: a `.run.json` sibling (distinct from the dataset `.manifest.json`
/// sidecar, which belongs to the SKL1 format).
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    out.with_file_name(name)
}

/// Writes via a temporary sibling plus rename, so a crash never leaves a
/// half-written manifest at the final path.
pub fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let body = serde_json::to_vec_pretty(manifest).context("encoding run manifest")?;
    std::fs::write(&tmp, body).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("moving manifest into place at {}", path.display()))?;
    Ok(())
}

/// Builds the artifact map from `(role, path)` pairs.
pub fn artifact_map(entries: &[(&str, &Path)]) -> BTreeMap<String, String> {
    entries
        .iter()
        .map(|(role, path)| (role.to_string(), path.display().to_string()))
        .collect()
}
