//! Single-file binary checkpoints.
//!
//! Layout: 4-byte magic `CFC1`, little-endian u32 header length, a JSON
//! header (format version, stage, seed, epoch counter, model config, the
//! canonical parameter list with shapes, optimizer metadata), then raw
//! little-endian f32 blocks: every parameter in canonical order, followed by
//! the optimizer's first-moment and second-moment buffers when present.
//! Writing what `load_checkpoint` read produces a byte-identical file.

use crate::error::{Error, Result};
use crate::model::{CascadeFormerModel, ModelConfig};
use crate::nn::{OptimizerHyper, OptimizerState, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CFC1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which stage produced the checkpoint (informational; both stages load).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        })
    }
}

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub stage: Stage,
    pub seed: u64,
    pub epochs_completed: u64,
    pub model: CascadeFormerModel<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimMeta {
    hyper: OptimizerHyper,
    step: u64,
    m_count: usize,
    v_count: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    stage: Stage,
    seed: u64,
    epochs_completed: u64,
    config: ModelConfig,
    params: Vec<ParamMeta>,
    optimizer: Option<OptimMeta>,
}

fn push_block(buf: &mut Vec<u8>, t: &Tensor<f32>) {
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        stage: ckpt.stage,
        seed: ckpt.seed,
        epochs_completed: ckpt.epochs_completed,
        config: ckpt.model.config().clone(),
        params: ckpt
            .model
            .param_names()
            .iter()
            .zip(ckpt.model.param_shapes())
            .map(|(name, shape)| ParamMeta {
                name: name.clone(),
                shape,
            })
            .collect(),
        optimizer: ckpt.optimizer.as_ref().map(|o| OptimMeta {
            hyper: o.hyper,
            step: o.step,
            m_count: o.m.len(),
            v_count: o.v.len(),
        }),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let payload: usize = 4 * ckpt.model.param_count();
    let mut buf = Vec::with_capacity(8 + header_bytes.len() + 3 * payload);
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&u32::try_from(header_bytes.len()).expect("header fits u32").to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    for p in ckpt.model.params() {
        push_block(&mut buf, p);
    }
    if let Some(opt) = &ckpt.optimizer {
        for t in opt.m.iter().chain(&opt.v) {
            push_block(&mut buf, t);
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated checkpoint: {what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn block(&mut self, shape: &[usize], what: &str) -> Result<Tensor<f32>> {
        let numel: usize = shape.iter().product();
        let raw = self.take(4 * numel, what)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunked by 4")))
            .collect();
        Tensor::new(shape.to_vec(), data)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a CascadeFormer checkpoint (bad magic)".into()));
    }
    let header_len =
        u32::from_le_bytes(r.take(4, "header length")?.try_into().expect("4 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(header_len, "JSON header")?)?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint format version {} (supported: {})",
            header.format_version, CHECKPOINT_VERSION
        )));
    }

    // Rebuild the layout from the stored config, then overwrite every value.
    let mut model = CascadeFormerModel::<f32>::new(header.config, header.seed)?;
    if header.params.len() != model.params().len() {
        return Err(Error::Format(format!(
            "parameter list mismatch: header lists {}, the config defines {}",
            header.params.len(),
            model.params().len()
        )));
    }
    let shapes = model.param_shapes();
    for (i, meta) in header.params.iter().enumerate() {
        if meta.name != model.param_names()[i] || meta.shape != shapes[i] {
            return Err(Error::Format(format!(
                "parameter {} ({:?}) does not match the model layout ({} {:?})",
                meta.name,
                meta.shape,
                model.param_names()[i],
                shapes[i]
            )));
        }
    }
    for (i, shape) in shapes.iter().enumerate() {
        let t = r.block(shape, &format!("parameter block {}", header.params[i].name))?;
        if !t.all_finite() {
            return Err(Error::Format(format!(
                "parameter {} contains a non-finite value",
                header.params[i].name
            )));
        }
        model.params_mut()[i] = t;
    }

    let optimizer = match header.optimizer {
        None => None,
        Some(meta) => {
            let mut state = OptimizerState::<f32>::new(meta.hyper, &shapes);
            if state.m.len() != meta.m_count || state.v.len() != meta.v_count {
                return Err(Error::Format(format!(
                    "optimizer buffer counts (m={}, v={}) do not match the hyperparameters",
                    meta.m_count, meta.v_count
                )));
            }
            for (i, (slot, shape)) in state.m.iter_mut().zip(&shapes).enumerate() {
                *slot = r.block(shape, &format!("optimizer m block {i}"))?;
            }
            for (i, (slot, shape)) in state.v.iter_mut().zip(&shapes).enumerate() {
                *slot = r.block(shape, &format!("optimizer v block {i}"))?;
            }
            state.step = meta.step;
            Some(state)
        }
    };

    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the checkpoint payload",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        stage: header.stage,
        seed: header.seed,
        epochs_completed: header.epochs_completed,
        model,
        optimizer,
    })
}
