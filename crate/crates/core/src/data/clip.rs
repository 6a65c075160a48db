//! Skeleton clip data model: clips, topologies, datasets, and batch assembly.

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};
use crate::rng::{stream_label, Rng};

/// One skeleton sequence: `persons x frames x joints x coords` coordinates in
/// row-major order, a class label, and optional per-frame joint visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonClip {
    pub(crate) persons: usize,
    pub(crate) frames: usize,
    pub(crate) joint_count: usize,
    pub(crate) coords: usize,
    pub(crate) joints: Vec<f32>,
    pub(crate) label: usize,
    /// `[frames x joints]`, true = visible. Tracks the primary person.
    pub(crate) visibility: Option<Vec<bool>>,
}

impl SkeletonClip {
    pub fn new(
        persons: usize,
        frames: usize,
        joint_count: usize,
        coords: usize,
        joints: Vec<f32>,
        label: usize,
        visibility: Option<Vec<bool>>,
    ) -> Result<Self> {
        if persons == 0 || frames == 0 || joint_count == 0 {
            return Err(Error::Data(format!(
                "clip dimensions must be positive, got {persons} persons, {frames} frames, \
                 {joint_count} joints"
            )));
        }
        if coords != 2 && coords != 3 {
            return Err(Error::Data(format!(
                "coordinate count must be 2 or 3, got {coords}"
            )));
        }
        let expected = persons
            .checked_mul(frames)
            .and_then(|n| n.checked_mul(joint_count))
            .and_then(|n| n.checked_mul(coords))
            .ok_or_else(|| Error::Data("clip extent overflows".into()))?;
        if joints.len() != expected {
            return Err(Error::Data(format!(
                "joint buffer holds {} values, extents require {expected}",
                joints.len()
            )));
        }
        if let Some(pos) = joints.iter().position(|v| !v.is_finite()) {
            let c = pos % coords;
            let j = pos / coords % joint_count;
            let t = pos / (coords * joint_count) % frames;
            let m = pos / (coords * joint_count * frames);
            return Err(Error::Data(format!(
                "non-finite coordinate at person {m}, frame {t}, joint {j}, coord {c}"
            )));
        }
        if let Some(vis) = &visibility {
            if vis.len() != frames * joint_count {
                return Err(Error::Data(format!(
                    "visibility holds {} flags, extents require {}",
                    vis.len(),
                    frames * joint_count
                )));
            }
        }
        Ok(Self {
            persons,
            frames,
            joint_count,
            coords,
            joints,
            label,
            visibility,
        })
    }

    pub fn persons(&self) -> usize {
        self.persons
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn coords(&self) -> usize {
        self.coords
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn joints(&self) -> &[f32] {
        &self.joints
    }

    pub fn visibility(&self) -> Option<&[bool]> {
        self.visibility.as_deref()
    }

    pub(crate) fn index(&self, m: usize, t: usize, j: usize, c: usize) -> usize {
        ((m * self.frames + t) * self.joint_count + j) * self.coords + c
    }

    pub fn get(&self, m: usize, t: usize, j: usize, c: usize) -> f32 {
        self.joints[self.index(m, t, j, c)]
    }

    /// All coordinates of one person, `[frames x joints x coords]`.
    pub fn person(&self, m: usize) -> &[f32] {
        let stride = self.frames * self.joint_count * self.coords;
        &self.joints[m * stride..(m + 1) * stride]
    }
}

/// Bone connectivity as (parent, child) joint-index pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    joint_count: usize,
    edges: Vec<(usize, usize)>,
}

impl SkeletonTopology {
    pub fn new(joint_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::Data("topology edge list is empty".into()));
        }
        for (i, &(p, c)) in edges.iter().enumerate() {
            if p >= joint_count || c >= joint_count {
                return Err(Error::Data(format!(
                    "topology edge {i} ({p}, {c}) exceeds joint count {joint_count}"
                )));
            }
            if p == c {
                return Err(Error::Data(format!("topology edge {i} is a self-loop on {p}")));
            }
        }
        Ok(Self { joint_count, edges })
    }

    /// A simple chain 0-1-2-...; the default connectivity for synthetic data.
    pub fn chain(joint_count: usize) -> Result<Self> {
        if joint_count < 2 {
            return Err(Error::Data(
                "chain topology needs at least two joints".into(),
            ));
        }
        Self::new(joint_count, (0..joint_count - 1).map(|j| (j, j + 1)).collect())
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

/// A labeled clip collection with shared extents and class names.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub clips: Vec<SkeletonClip>,
    pub joint_count: usize,
    pub coords: usize,
    pub class_names: Vec<String>,
    pub topology: Option<SkeletonTopology>,
}

impl Dataset {
    /// Checks cross-clip consistency: shared extents, labels within range,
    /// topology matching the joint count.
    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Data("dataset has no classes".into()));
        }
        for (i, clip) in self.clips.iter().enumerate() {
            if clip.joint_count != self.joint_count || clip.coords != self.coords {
                return Err(Error::Data(format!(
                    "clip {i}: extents {}x{} differ from dataset {}x{}",
                    clip.joint_count, clip.coords, self.joint_count, self.coords
                )));
            }
            if clip.label >= self.class_names.len() {
                return Err(Error::Data(format!(
                    "clip {i}: label {} exceeds class count {}",
                    clip.label,
                    self.class_names.len()
                )));
            }
        }
        if let Some(topo) = &self.topology {
            if topo.joint_count() != self.joint_count {
                return Err(Error::Data(format!(
                    "topology joint count {} differs from dataset {}",
                    topo.joint_count(),
                    self.joint_count
                )));
            }
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// Clips per class, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for clip in &self.clips {
            counts[clip.label] += 1;
        }
        counts
    }
}

/// A padded minibatch: coordinates as `[B x C x T_max x J]`, a prefix
/// validity mask per clip, and the labels.
#[derive(Debug, Clone)]
pub struct Batch<F: Real> {
    pub x: Tensor<F>,
    /// `[B x T_max]` row-major; true marks a real (unpadded) frame.
    pub frame_valid: Vec<bool>,
    pub labels: Vec<usize>,
}

impl<F: Real> Batch<F> {
    pub fn batch_size(&self) -> usize {
        self.labels.len()
    }

    pub fn max_frames(&self) -> usize {
        self.x.shape()[2]
    }

    pub fn frame_valid_row(&self, b: usize) -> &[bool] {
        let t = self.max_frames();
        &self.frame_valid[b * t..(b + 1) * t]
    }

    pub fn convert<G: Real>(&self) -> Batch<G> {
        Batch {
            x: self.x.convert(),
            frame_valid: self.frame_valid.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// Zero-pads single-person clips to a common length.
///
/// `max_t` fixes the padded length explicitly; clips longer than it are an
/// error (frame sampling should have run first). Without it the longest clip
/// in the batch sets the length.
pub fn pad_batch(clips: &[&SkeletonClip], max_t: Option<usize>) -> Result<Batch<f32>> {
    let first = clips
        .first()
        .ok_or_else(|| Error::Data("cannot batch zero clips".into()))?;
    let (j, c) = (first.joint_count, first.coords);
    for (i, clip) in clips.iter().enumerate() {
        if clip.joint_count != j || clip.coords != c {
            return Err(Error::shape(
                "pad_batch",
                &[j, c],
                &[clip.joint_count, clip.coords],
            ));
        }
        if clip.persons != 1 {
            return Err(Error::Data(format!(
                "clip {i} has {} persons; select one before batching",
                clip.persons
            )));
        }
    }
    let longest = clips.iter().map(|clip| clip.frames).max().unwrap();
    let t_max = match max_t {
        Some(limit) => {
            if longest > limit {
                return Err(Error::Data(format!(
                    "clip of {longest} frames exceeds batch limit {limit}; sample frames first"
                )));
            }
            limit
        }
        None => longest,
    };

    let b = clips.len();
    let mut x = Tensor::zeros([b, c, t_max, j]);
    let mut frame_valid = vec![false; b * t_max];
    let mut labels = Vec::with_capacity(b);
    for (bi, clip) in clips.iter().enumerate() {
        labels.push(clip.label);
        for t in 0..clip.frames {
            frame_valid[bi * t_max + t] = true;
            for ji in 0..j {
                for ci in 0..c {
                    let dst = ((bi * c + ci) * t_max + t) * j + ji;
                    x.data_mut()[dst] = clip.get(0, t, ji, ci);
                }
            }
        }
    }
    Ok(Batch {
        x,
        frame_valid,
        labels,
    })
}

/// Keeps the person whose coordinate series carry the most temporal variance
/// (summed over joints and axes); ties go to the lowest index. The winner's
/// coordinates are returned unmodified.
pub fn select_most_active_person(clip: &SkeletonClip) -> SkeletonClip {
    if clip.persons == 1 {
        return clip.clone();
    }
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for m in 0..clip.persons {
        let mut score = 0.0;
        for j in 0..clip.joint_count {
            for c in 0..clip.coords {
                let mut mean = 0.0;
                for t in 0..clip.frames {
                    mean += f64::from(clip.get(m, t, j, c));
                }
                mean /= clip.frames as f64;
                let mut var = 0.0;
                for t in 0..clip.frames {
                    let d = f64::from(clip.get(m, t, j, c)) - mean;
                    var += d * d;
                }
                score += var / clip.frames as f64;
            }
        }
        if score > best_score {
            best_score = score;
            best = m;
        }
    }
    SkeletonClip {
        persons: 1,
        frames: clip.frames,
        joint_count: clip.joint_count,
        coords: clip.coords,
        joints: clip.person(best).to_vec(),
        label: clip.label,
        visibility: clip.visibility.clone(),
    }
}

/// Drops frames where more than half the joints are flagged invisible, then
/// zeroes the surviving invisible joints. Consumes the visibility channel.
pub fn drop_occluded_frames(clip: &SkeletonClip) -> Result<SkeletonClip> {
    let Some(vis) = &clip.visibility else {
        return Ok(clip.clone());
    };
    let j = clip.joint_count;
    let kept: Vec<usize> = (0..clip.frames)
        .filter(|&t| {
            let invisible = vis[t * j..(t + 1) * j].iter().filter(|&&v| !v).count();
            invisible * 2 <= j
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::Data(
            "every frame is majority-occluded; nothing to keep".into(),
        ));
    }
    let mut joints = Vec::with_capacity(clip.persons * kept.len() * j * clip.coords);
    for m in 0..clip.persons {
        for &t in &kept {
            for ji in 0..j {
                for c in 0..clip.coords {
                    let v = if vis[t * j + ji] { clip.get(m, t, ji, c) } else { 0.0 };
                    joints.push(v);
                }
            }
        }
    }
    SkeletonClip::new(
        clip.persons,
        kept.len(),
        j,
        clip.coords,
        joints,
        clip.label,
        None,
    )
}

/// Splits a dataset into (train, holdout) with per-class stratification:
/// each class contributes `floor(frac * count)` clips to the holdout,
/// chosen by a seeded shuffle. File order is preserved within both halves.
pub fn split_holdout(dataset: &Dataset, holdout_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&holdout_frac) {
        return Err(Error::Config(format!(
            "holdout fraction must be in [0, 1), got {holdout_frac}"
        )));
    }
    dataset.validate()?;
    let mut held = vec![false; dataset.clips.len()];
    for class in 0..dataset.class_count() {
        let mut members: Vec<usize> = dataset
            .clips
            .iter()
            .enumerate()
            .filter(|(_, clip)| clip.label == class)
            .map(|(i, _)| i)
            .collect();
        let take = (holdout_frac * members.len() as f64).floor() as usize;
        let mut rng = Rng::derive(seed, &[stream_label("holdout"), class as u64]);
        rng.shuffle(&mut members);
        for &i in members.iter().take(take) {
            held[i] = true;
        }
    }
    let pick = |keep_held: bool| Dataset {
        clips: dataset
            .clips
            .iter()
            .zip(&held)
            .filter(|(_, &h)| h == keep_held)
            .map(|(clip, _)| clip.clone())
            .collect(),
        joint_count: dataset.joint_count,
        coords: dataset.coords,
        class_names: dataset.class_names.clone(),
        topology: dataset.topology.clone(),
    };
    Ok((pick(false), pick(true)))
}
