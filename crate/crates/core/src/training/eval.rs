//! Deterministic, augmentation-free evaluation: overall and per-class
//! accuracy, a confusion matrix, and optional class-group breakdowns.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::CascadeFormerModel;
use crate::nn::{Graph, Real};
use crate::training::loops::{argmax_rows, build_batch, check_geometry, check_labels};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Clips scored per forward pass; results are independent of this because
/// clips never attend across batch rows and padding is exactly invisible.
const EVAL_BATCH: usize = 64;

/// Accuracy breakdown of one dataset pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: f64,
    /// Indexed by class; classes with no clips score 0.
    pub per_class: Vec<f64>,
    /// `confusion[true_label][predicted]` clip counts.
    pub confusion: Vec<Vec<u64>>,
    /// Accuracy over the clips whose labels fall in each named group.
    pub groups: BTreeMap<String, f64>,
}

/// Argmax-of-logits class prediction for every clip, in dataset order.
pub fn predict<F: Real>(model: &CascadeFormerModel<F>, dataset: &Dataset) -> Result<Vec<usize>> {
    check_geometry(model, dataset)?;
    let n = dataset.clips.len();
    let indices: Vec<usize> = (0..n).collect();
    let mut preds = Vec::with_capacity(n);
    for chunk in indices.chunks(EVAL_BATCH) {
        let batch = build_batch::<F>(dataset, chunk)?;
        let mut g = Graph::new();
        let ids = model.bind(&mut g);
        let logits = model.logits(&mut g, &ids, &batch)?;
        preds.extend(argmax_rows(g.value(logits)));
    }
    Ok(preds)
}

/// Scores `model` on `dataset`. `groups` maps a display name to the class
/// indices it covers; every listed class must exist in the model's label
/// space.
pub fn evaluate<F: Real>(
    model: &CascadeFormerModel<F>,
    dataset: &Dataset,
    groups: Option<&BTreeMap<String, Vec<usize>>>,
) -> Result<EvalReport> {
    check_labels(model, dataset)?;
    let k = model.config().n_classes;
    if let Some(groups) = groups {
        for (name, classes) in groups {
            if let Some(c) = classes.iter().find(|&&c| c >= k) {
                return Err(Error::Config(format!(
                    "group {name:?} names unknown class {c} (model has {k} classes)"
                )));
            }
        }
    }

    let preds = predict(model, dataset)?;
    let mut confusion = vec![vec![0u64; k]; k];
    for (clip, &pred) in dataset.clips.iter().zip(&preds) {
        confusion[clip.label()][pred] += 1;
    }
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let per_class: Vec<f64> = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let count: u64 = row.iter().sum();
            if count == 0 {
                0.0
            } else {
                row[i] as f64 / count as f64
            }
        })
        .collect();

    let mut group_acc = BTreeMap::new();
    if let Some(groups) = groups {
        for (name, classes) in groups {
            let mut hit = 0u64;
            let mut count = 0u64;
            for (clip, &pred) in dataset.clips.iter().zip(&preds) {
                if classes.contains(&clip.label()) {
                    count += 1;
                    hit += u64::from(pred == clip.label());
                }
            }
            let acc = if count == 0 { 0.0 } else { hit as f64 / count as f64 };
            group_acc.insert(name.clone(), acc);
        }
    }

    Ok(EvalReport {
        overall: trace as f64 / total as f64,
        per_class,
        confusion,
        groups: group_acc,
    })
}
