//! SKL1 clip file I/O.
//!
//! Layout (little-endian): magic `SKL1`; u32 clip_count, joint_count,
//! coord_count, class_count; then per clip: u32 label, u32 persons,
//! u32 frames, u8 has_visibility, f32 joints[persons][frames][joints][coords],
//! and u8 visibility[frames][joints] when flagged. A sidecar
//! `<path>.manifest.json` carries class names and, optionally, bone edges.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::clip::{Dataset, SkeletonClip, SkeletonTopology};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SKL1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<[usize; 2]>>,
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".manifest.json");
    PathBuf::from(os)
}

/// Serializes a dataset to `path` plus its sidecar manifest.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let clip_count = u32::try_from(dataset.clips.len())
        .map_err(|_| Error::Data("clip count exceeds u32".into()))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [
        clip_count,
        dataset.joint_count as u32,
        dataset.coords as u32,
        dataset.class_names.len() as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for clip in &dataset.clips {
        buf.extend_from_slice(&(clip.label() as u32).to_le_bytes());
        buf.extend_from_slice(&(clip.persons() as u32).to_le_bytes());
        buf.extend_from_slice(&(clip.frames() as u32).to_le_bytes());
        buf.push(u8::from(clip.visibility().is_some()));
        for &v in clip.joints() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(vis) = clip.visibility() {
            buf.extend(vis.iter().map(|&v| u8::from(v)));
        }
    }
    fs::write(path, &buf)?;

    let manifest = Manifest {
        class_names: dataset.class_names.clone(),
        edges: dataset
            .topology
            .as_ref()
            .map(|t| t.edges().iter().map(|&(p, c)| [p, c]).collect()),
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(manifest_path(path), json)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let slice = &self.buf[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(Error::Format(format!(
                "truncated file: {what} needs {n} bytes at offset {}, file holds {}",
                self.pos,
                self.buf.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Loads a dataset, validating every clip. Errors name the offending clip.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        buf: &bytes,
        pos: 0,
    };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let clip_count = r.u32("clip count")? as usize;
    let joint_count = r.u32("joint count")? as usize;
    let coords = r.u32("coord count")? as usize;
    let class_count = r.u32("class count")? as usize;

    let mut clips = Vec::with_capacity(clip_count.min(1 << 20));
    for ci in 0..clip_count {
        let clip = (|| -> Result<SkeletonClip> {
            let label = r.u32("label")? as usize;
            let persons = r.u32("person count")? as usize;
            let frames = r.u32("frame count")? as usize;
            let has_visibility = r.u8("visibility flag")? != 0;
            let n = persons
                .checked_mul(frames)
                .and_then(|n| n.checked_mul(joint_count))
                .and_then(|n| n.checked_mul(coords))
                .ok_or_else(|| Error::Format("joint extent overflows".into()))?;
            let raw = r.take(n * 4, "joint coordinates")?;
            let joints: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let visibility = if has_visibility {
                let raw = r.take(frames * joint_count, "visibility flags")?;
                Some(raw.iter().map(|&b| b != 0).collect())
            } else {
                None
            };
            if label >= class_count {
                return Err(Error::Data(format!(
                    "label {label} exceeds class count {class_count}"
                )));
            }
            SkeletonClip::new(persons, frames, joint_count, coords, joints, label, visibility)
        })()
        .map_err(|e| clip_error(ci, e))?;
        clips.push(clip);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after clip {}",
            bytes.len() - r.pos,
            clip_count.saturating_sub(1)
        )));
    }

    let manifest_file = manifest_path(path);
    let (class_names, topology) = if manifest_file.exists() {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_file)?)?;
        if manifest.class_names.len() != class_count {
            return Err(Error::Format(format!(
                "manifest lists {} class names, header says {class_count}",
                manifest.class_names.len()
            )));
        }
        let topology = manifest
            .edges
            .map(|edges| {
                SkeletonTopology::new(
                    joint_count,
                    edges.into_iter().map(|[p, c]| (p, c)).collect(),
                )
            })
            .transpose()?;
        (manifest.class_names, topology)
    } else {
        ((0..class_count).map(|k| format!("class_{k}")).collect(), None)
    };

    let dataset = Dataset {
        clips,
        joint_count,
        coords,
        class_names,
        topology,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn clip_error(index: usize, e: Error) -> Error {
    match e {
        Error::Data(msg) => Error::Data(format!("clip {index}: {msg}")),
        Error::Format(msg) => Error::Format(format!("clip {index}: {msg}")),
        other => other,
    }
}
