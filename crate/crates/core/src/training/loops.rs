//! Deterministic epoch drivers for masked pretraining and cascading
//! finetuning.
//!
//! Every random choice is drawn from a stream derived from the run seed and
//! a purpose label (batch shuffling by epoch, masks by epoch and clip), so a
//! run resumed from any epoch boundary replays the exact step sequence of an
//! uninterrupted run.

use crate::data::{pad_batch, Batch, Dataset, SkeletonClip};
use crate::error::{Error, Result};
use crate::model::{make_mask, CascadeFormerModel, MaskSpec};
use crate::nn::{lr_at, Graph, OptimizerState, Real, Tensor};
use crate::rng::{stream_label, Rng};
use crate::training::config::{apply_freeze_policy, FinetuneConfig, PretrainConfig};
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

/// One epoch of the metrics log; `accuracy` is `None` for pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: u64,
    pub split: String,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub lr: f64,
    pub wall_ms: u64,
}

/// Appends JSONL records to the configured path, if any. A window starting
/// at epoch 0 truncates; resumed windows append.
struct MetricsSink {
    file: Option<File>,
}

impl MetricsSink {
    fn open(path: Option<&Path>, fresh: bool) -> Result<Self> {
        let file = match path {
            Some(p) => Some(if fresh {
                File::create(p)?
            } else {
                OpenOptions::new().create(true).append(true).open(p)?
            }),
            None => None,
        };
        Ok(MetricsSink { file })
    }

    fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        if let Some(f) = &mut self.file {
            let mut line = serde_json::to_string(record)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

pub(crate) fn check_geometry<F: Real>(
    model: &CascadeFormerModel<F>,
    dataset: &Dataset,
) -> Result<()> {
    if dataset.clips.is_empty() {
        return Err(Error::Data("dataset contains no clips".into()));
    }
    dataset.validate()?;
    let cfg = model.config();
    if dataset.joint_count != cfg.joints || dataset.coords != cfg.coords {
        return Err(Error::Config(format!(
            "dataset geometry (J={}, C={}) does not match the model (J={}, C={})",
            dataset.joint_count, dataset.coords, cfg.joints, cfg.coords
        )));
    }
    Ok(())
}

pub(crate) fn check_labels<F: Real>(
    model: &CascadeFormerModel<F>,
    dataset: &Dataset,
) -> Result<()> {
    let k = model.config().n_classes;
    for (i, clip) in dataset.clips.iter().enumerate() {
        if clip.label() >= k {
            return Err(Error::Data(format!(
                "clip {i}: label {} outside the model's {k} classes",
                clip.label()
            )));
        }
    }
    Ok(())
}

/// Clip order for one epoch, split into batches.
fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::derive(seed, &[stream_label("shuffle"), epoch]);
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub(crate) fn build_batch<F: Real>(dataset: &Dataset, indices: &[usize]) -> Result<Batch<F>> {
    let refs: Vec<&SkeletonClip> = indices.iter().map(|&i| &dataset.clips[i]).collect();
    Ok(pad_batch(&refs, None)?.convert())
}

/// Index of the largest logit per row; ties go to the lowest class index.
pub(crate) fn argmax_rows<F: Real>(logits: &Tensor<F>) -> Vec<usize> {
    let k = logits.shape()[logits.shape().len() - 1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn resolve_window(start_epoch: u64, stop_epoch: Option<u64>, total: u64) -> Result<u64> {
    let stop = stop_epoch.unwrap_or(total);
    if start_epoch > stop || stop > total {
        return Err(Error::Config(format!(
            "epoch window {start_epoch}..{stop} outside the configured 0..{total}"
        )));
    }
    Ok(stop)
}

/// Runs masked-reconstruction pretraining for epochs `start_epoch..stop_epoch`
/// (default: through `cfg.epochs`), updating `model` and `optimizer` in
/// place. Returns one record per completed epoch. The schedule always spans
/// the full `cfg.epochs` so split windows reproduce an uninterrupted run.
pub fn pretrain<F: Real>(
    model: &mut CascadeFormerModel<F>,
    optimizer: &mut OptimizerState<F>,
    dataset: &Dataset,
    cfg: &PretrainConfig,
    start_epoch: u64,
    stop_epoch: Option<u64>,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    check_geometry(model, dataset)?;
    let stop = resolve_window(start_epoch, stop_epoch, cfg.epochs)?;
    let n = dataset.clips.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let total_steps = cfg.epochs * steps_per_epoch;
    let trainable = vec![true; model.params().len()];
    let mut sink = MetricsSink::open(cfg.metrics_path.as_deref(), start_epoch == 0)?;
    let mut records = Vec::new();

    for epoch in start_epoch..stop {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut epoch_lr = cfg.base_lr;
        for (batch_idx, batch_clips) in
            epoch_batches(n, cfg.batch_size, cfg.seed, epoch).iter().enumerate()
        {
            let step = epoch * steps_per_epoch + batch_idx as u64;
            let lr = lr_at(cfg.schedule, step, total_steps, cfg.base_lr, cfg.min_lr)?;
            if batch_idx == 0 {
                epoch_lr = lr;
            }

            let batch: Batch<F> = build_batch(dataset, batch_clips)?;
            let specs = batch_clips
                .iter()
                .map(|&ci| {
                    let mut rng =
                        Rng::derive(cfg.seed, &[stream_label("mask"), epoch, ci as u64]);
                    make_mask(
                        cfg.mask_mode,
                        cfg.mask_ratio,
                        dataset.clips[ci].frames(),
                        dataset.joint_count,
                        &mut rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let mask = MaskSpec::stack(&specs, batch.max_frames())?;

            let mut g = Graph::new();
            let ids = model.bind(&mut g);
            let loss = model.pretrain_loss(&mut g, &ids, &batch, &mask)?;
            let loss_val = g.value(loss).item().to_f64();
            if !loss_val.is_finite() {
                return Err(Error::NonFinite(format!(
                    "pretrain loss at step {step} (epoch {epoch})"
                )));
            }
            g.backward(loss)?;
            let grads: Vec<Option<Tensor<F>>> =
                ids.iter().map(|&id| g.grad(id).cloned()).collect();
            optimizer.step(model.params_mut(), &grads, &trainable, lr)?;

            loss_sum += loss_val * batch_clips.len() as f64;
        }
        let record = MetricsRecord {
            epoch,
            split: "pretrain".into(),
            loss: loss_sum / n as f64,
            accuracy: None,
            lr: epoch_lr,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        sink.write(&record)?;
        records.push(record);
    }
    Ok(records)
}

/// Runs cascading finetuning for epochs `start_epoch..stop_epoch` (default:
/// through `cfg.epochs`). The freeze policy decides which pretrained
/// parameters keep training; the reconstruction decoder is left out of the
/// graph entirely. Records carry the running train accuracy.
pub fn finetune<F: Real>(
    model: &mut CascadeFormerModel<F>,
    optimizer: &mut OptimizerState<F>,
    dataset: &Dataset,
    cfg: &FinetuneConfig,
    start_epoch: u64,
    stop_epoch: Option<u64>,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    check_geometry(model, dataset)?;
    check_labels(model, dataset)?;
    let stop = resolve_window(start_epoch, stop_epoch, cfg.epochs)?;
    let n = dataset.clips.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let total_steps = cfg.epochs * steps_per_epoch;
    let trainable = apply_freeze_policy(model, cfg.freeze);
    let mut sink = MetricsSink::open(cfg.metrics_path.as_deref(), start_epoch == 0)?;
    let mut records = Vec::new();

    for epoch in start_epoch..stop {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut epoch_lr = cfg.base_lr;
        for (batch_idx, batch_clips) in
            epoch_batches(n, cfg.batch_size, cfg.seed, epoch).iter().enumerate()
        {
            let step = epoch * steps_per_epoch + batch_idx as u64;
            let lr = lr_at(cfg.schedule, step, total_steps, cfg.base_lr, cfg.min_lr)?;
            if batch_idx == 0 {
                epoch_lr = lr;
            }

            let batch: Batch<F> = build_batch(dataset, batch_clips)?;
            let mut g = Graph::new();
            let ids = model.bind_trainable(&mut g, &trainable)?;
            let (loss, logits) = model.finetune_loss(&mut g, &ids, &batch)?;
            let loss_val = g.value(loss).item().to_f64();
            if !loss_val.is_finite() {
                return Err(Error::NonFinite(format!(
                    "finetune loss at step {step} (epoch {epoch})"
                )));
            }
            correct += argmax_rows(g.value(logits))
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();
            g.backward(loss)?;
            let grads: Vec<Option<Tensor<F>>> =
                ids.iter().map(|&id| g.grad(id).cloned()).collect();
            optimizer.step(model.params_mut(), &grads, &trainable, lr)?;

            loss_sum += loss_val * batch_clips.len() as f64;
        }
        let record = MetricsRecord {
            epoch,
            split: "finetune".into(),
            loss: loss_sum / n as f64,
            accuracy: Some(correct as f64 / n as f64),
            lr: epoch_lr,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        sink.write(&record)?;
        records.push(record);
    }
    Ok(records)
}
