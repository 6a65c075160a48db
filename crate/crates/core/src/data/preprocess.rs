//! Clip preprocessing: frame samplers, hip-centered scale normalization,
//! training-time augmentation, and bone representations.

use serde::{Deserialize, Serialize};

use crate::data::clip::{SkeletonClip, SkeletonTopology};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::Rng;

/// Gathers the given source frames (and visibility rows) into a new clip.
fn gather_frames(clip: &SkeletonClip, indices: &[usize]) -> SkeletonClip {
    let (j, c) = (clip.joint_count(), clip.coords());
    let frame_len = j * c;
    let mut joints = Vec::with_capacity(clip.persons() * indices.len() * frame_len);
    for m in 0..clip.persons() {
        let person = clip.person(m);
        for &t in indices {
            joints.extend_from_slice(&person[t * frame_len..(t + 1) * frame_len]);
        }
    }
    let visibility = clip.visibility().map(|vis| {
        let mut out = Vec::with_capacity(indices.len() * j);
        for &t in indices {
            out.extend_from_slice(&vis[t * j..(t + 1) * j]);
        }
        out
    });
    SkeletonClip {
        persons: clip.persons(),
        frames: indices.len(),
        joint_count: j,
        coords: c,
        joints,
        label: clip.label(),
        visibility,
    }
}

/// Resamples a clip to exactly `length` frames, evenly spaced over a window
/// centered on the clip middle.
///
/// The window spans `min(T, round(1.3 * length))` frames; index `i` maps to
/// source frame `start + floor(i * window / length)` with
/// `start = (T - window) / 2`. Clips shorter than `length` repeat frames
/// evenly. Source indices are always nondecreasing.
pub fn sample_frames_center(clip: &SkeletonClip, length: usize) -> Result<SkeletonClip> {
    if length == 0 {
        return Err(Error::Config("sample length must be positive".into()));
    }
    let t = clip.frames();
    let window = t.min((1.3 * length as f64).round() as usize).max(1);
    let start = (t - window) / 2;
    let indices: Vec<usize> = (0..length).map(|i| start + i * window / length).collect();
    Ok(gather_frames(clip, &indices))
}

/// Resamples a clip to exactly `length` frames drawn at random: a sorted
/// sample without replacement when the clip is long enough, with replacement
/// otherwise.
pub fn sample_frames_random(clip: &SkeletonClip, length: usize, rng: &mut Rng) -> Result<SkeletonClip> {
    if length == 0 {
        return Err(Error::Config("sample length must be positive".into()));
    }
    let t = clip.frames();
    let indices = if t >= length {
        rng.sample_without_replacement(t, length)
    } else {
        let mut picks: Vec<usize> = (0..length).map(|_| rng.below(t)).collect();
        picks.sort_unstable();
        picks
    };
    Ok(gather_frames(clip, &indices))
}

/// Centers every frame at the hip joint, then divides by the clip-level
/// scale: the mean over frames of the largest pairwise joint distance.
/// Each person is normalized independently. A person with zero spatial
/// extent across the whole clip is an error.
pub fn normalize_hip_center_scale(clip: &SkeletonClip, hip_index: usize) -> Result<SkeletonClip> {
    let (t_len, j_len, c_len) = (clip.frames(), clip.joint_count(), clip.coords());
    if hip_index >= j_len {
        return Err(Error::Config(format!(
            "hip index {hip_index} out of range for {j_len} joints"
        )));
    }
    let mut out = clip.clone();
    for m in 0..clip.persons() {
        // Hip subtraction first; distances are translation-invariant, so the
        // scale can be measured on the centered coordinates.
        for t in 0..t_len {
            let mut hip = [0.0f32; 3];
            for (c, h) in hip[..c_len].iter_mut().enumerate() {
                *h = clip.get(m, t, hip_index, c);
            }
            for j in 0..j_len {
                for (c, &h) in hip[..c_len].iter().enumerate() {
                    let idx = out.index(m, t, j, c);
                    out.joints[idx] = clip.get(m, t, j, c) - h;
                }
            }
        }
        let mut scale_sum = 0.0f64;
        for t in 0..t_len {
            let mut frame_max = 0.0f64;
            for a in 0..j_len {
                for b in a + 1..j_len {
                    let mut dist2 = 0.0f64;
                    for c in 0..c_len {
                        let d = f64::from(out.get(m, t, a, c)) - f64::from(out.get(m, t, b, c));
                        dist2 += d * d;
                    }
                    frame_max = frame_max.max(dist2.sqrt());
                }
            }
            scale_sum += frame_max;
        }
        let scale = scale_sum / t_len as f64;
        if scale == 0.0 {
            return Err(Error::Data(format!(
                "person {m} has zero spatial extent; cannot scale-normalize"
            )));
        }
        let stride = t_len * j_len * c_len;
        for v in &mut out.joints[m * stride..(m + 1) * stride] {
            *v = (f64::from(*v) / scale) as f32;
        }
    }
    Ok(out)
}

/// Training-time augmentation toggles. `None` ranges disable that transform
/// entirely; a range is sampled uniformly per clip.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct AugmentConfig {
    /// Rotation angle range in radians (2D: in-plane; 3D: about axis 1).
    pub rotation: Option<(f64, f64)>,
    /// Uniform scale factor range; must be positive.
    pub scale: Option<(f64, f64)>,
    /// Probability of zeroing each joint across the whole clip.
    pub joint_drop_prob: f64,
    /// Probability of zeroing one coordinate axis across the whole clip.
    pub axis_drop_prob: f64,
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((lo, hi)) = self.rotation {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("bad rotation range ({lo}, {hi})")));
            }
        }
        if let Some((lo, hi)) = self.scale {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
                return Err(Error::Config(format!(
                    "scale range must be positive and ordered, got ({lo}, {hi})"
                )));
            }
        }
        for (p, what) in [
            (self.joint_drop_prob, "joint drop"),
            (self.axis_drop_prob, "axis drop"),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "{what} probability must be in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// Applies rotation, scaling, joint dropping, and axis dropping in that
/// order, all driven by `rng`. Disabled transforms touch neither the data
/// nor the rng stream.
pub fn augment(clip: &SkeletonClip, cfg: &AugmentConfig, rng: &mut Rng) -> Result<SkeletonClip> {
    cfg.validate()?;
    let mut out = clip.clone();
    let c_len = clip.coords();

    if let Some((lo, hi)) = cfg.rotation {
        let theta = rng.uniform(lo, hi);
        let (sin, cos) = (theta.sin() as f32, theta.cos() as f32);
        // 2D rotates the plane; 3D rotates about the vertical axis (axis 1),
        // mixing axes 0 and 2.
        let (ca, cb) = if c_len == 2 { (0, 1) } else { (0, 2) };
        for chunk in out.joints.chunks_exact_mut(c_len) {
            let (a, b) = (chunk[ca], chunk[cb]);
            chunk[ca] = cos * a - sin * b;
            chunk[cb] = sin * a + cos * b;
        }
    }
    if let Some((lo, hi)) = cfg.scale {
        let factor = rng.uniform(lo, hi) as f32;
        for v in &mut out.joints {
            *v *= factor;
        }
    }
    if cfg.joint_drop_prob > 0.0 {
        for j in 0..clip.joint_count() {
            if rng.next_f64() < cfg.joint_drop_prob {
                for m in 0..clip.persons() {
                    for t in 0..clip.frames() {
                        for c in 0..c_len {
                            let idx = out.index(m, t, j, c);
                            out.joints[idx] = 0.0;
                        }
                    }
                }
            }
        }
    }
    if cfg.axis_drop_prob > 0.0 && rng.next_f64() < cfg.axis_drop_prob {
        let axis = rng.below(c_len);
        for chunk in out.joints.chunks_exact_mut(c_len) {
            chunk[axis] = 0.0;
        }
    }
    Ok(out)
}

/// How to express joints relative to their bones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoneMode {
    /// child - parent per edge: `[T x E x C]`.
    Subtract,
    /// parent and child concatenated per edge: `[T x E x 2C]`.
    Concat,
    /// (slope, intercept) of the 2D line through parent and child:
    /// `[T x E x 2]`.
    Parameterize,
}

/// Slope magnitude assigned to a vertical bone, where the true slope
/// diverges.
const VERTICAL_SLOPE: f32 = 1e8;

/// Re-expresses a single-person clip edge-wise. See [`BoneMode`] for the
/// output layout per mode.
pub fn to_bone_representation(
    clip: &SkeletonClip,
    topology: &SkeletonTopology,
    mode: BoneMode,
) -> Result<Tensor<f32>> {
    if clip.persons() != 1 {
        return Err(Error::Data(format!(
            "bone representation requires a single person, got {}",
            clip.persons()
        )));
    }
    if topology.joint_count() != clip.joint_count() {
        return Err(Error::shape(
            "to_bone_representation",
            &[topology.joint_count()],
            &[clip.joint_count()],
        ));
    }
    if mode == BoneMode::Parameterize && clip.coords() != 2 {
        return Err(Error::Config(
            "parameterize bone mode requires 2-coordinate skeletons".into(),
        ));
    }
    let (t_len, c_len) = (clip.frames(), clip.coords());
    let edges = topology.edges();
    let out_c = match mode {
        BoneMode::Subtract => c_len,
        BoneMode::Concat => 2 * c_len,
        BoneMode::Parameterize => 2,
    };
    let mut data = Vec::with_capacity(t_len * edges.len() * out_c);
    for t in 0..t_len {
        for &(p, ch) in edges {
            match mode {
                BoneMode::Subtract => {
                    for c in 0..c_len {
                        data.push(clip.get(0, t, ch, c) - clip.get(0, t, p, c));
                    }
                }
                BoneMode::Concat => {
                    for c in 0..c_len {
                        data.push(clip.get(0, t, p, c));
                    }
                    for c in 0..c_len {
                        data.push(clip.get(0, t, ch, c));
                    }
                }
                BoneMode::Parameterize => {
                    let (px, py) = (clip.get(0, t, p, 0), clip.get(0, t, p, 1));
                    let (cx, cy) = (clip.get(0, t, ch, 0), clip.get(0, t, ch, 1));
                    let (dx, dy) = (cx - px, cy - py);
                    let slope = if dx.abs() >= 1e-8 {
                        dy / dx
                    } else if dy == 0.0 {
                        0.0 // zero-length bone: degenerate but finite
                    } else {
                        VERTICAL_SLOPE * dy.signum()
                    };
                    data.push(slope);
                    data.push(py - slope * px);
                }
            }
        }
    }
    Tensor::new([t_len, edges.len(), out_c], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_label;

    fn clip_from(t: usize, j: usize, c: usize, f: impl Fn(usize, usize, usize) -> f32) -> SkeletonClip {
        let mut joints = Vec::new();
        for ti in 0..t {
            for ji in 0..j {
                for ci in 0..c {
                    joints.push(f(ti, ji, ci));
                }
            }
        }
        SkeletonClip::new(1, t, j, c, joints, 0, None).unwrap()
    }

    /// Frame tagged into coordinate 0 so gathered indices are readable back.
    fn tagged(t: usize) -> SkeletonClip {
        clip_from(t, 2, 2, |ti, ji, ci| (ti * 10 + ji * 2 + ci) as f32)
    }

    fn source_frames(clip: &SkeletonClip) -> Vec<usize> {
        (0..clip.frames())
            .map(|t| (clip.get(0, t, 0, 0) / 10.0) as usize)
            .collect()
    }

    #[test]
    fn center_sampling_identity_when_lengths_match() {
        let clip = tagged(64);
        let sampled = sample_frames_center(&clip, 64).unwrap();
        assert_eq!(sampled, clip);
    }

    #[test]
    fn center_sampling_long_clip_matches_index_formula() {
        // T=128, L=64: window = min(128, round(83.2)) = 83, start = 22,
        // index i -> 22 + floor(83 i / 64). Recomputed here independently.
        let clip = tagged(128);
        let sampled = sample_frames_center(&clip, 64).unwrap();
        let got = source_frames(&sampled);
        let want: Vec<usize> = (0..64).map(|i| 22 + (83 * i) / 64).collect();
        assert_eq!(got, want);
        assert_eq!(got[0], 22);
        assert_eq!(got[1], 23);
        assert_eq!(got[63], 103);
        assert!(got.windows(2).all(|w| w[0] < w[1]), "strictly increasing");
    }

    #[test]
    fn center_sampling_short_clip_repeats_frames_evenly() {
        let clip = tagged(10);
        let sampled = sample_frames_center(&clip, 64).unwrap();
        let got = source_frames(&sampled);
        assert_eq!(got.len(), 64);
        assert!(got.windows(2).all(|w| w[0] <= w[1]), "nondecreasing");
        // Every source frame appears floor(64/10)=6 or ceil(64/10)=7 times.
        for j in 0..10 {
            let count = got.iter().filter(|&&v| v == j).count();
            assert!(count == 6 || count == 7, "frame {j} appears {count} times");
        }
    }

    #[test]
    fn random_sampling_subset_properties_hold_over_many_seeds() {
        let clip = tagged(100);
        for seed in 0..1000u64 {
            let mut rng = Rng::derive(seed, &[stream_label("sample-test")]);
            let sampled = sample_frames_random(&clip, 64, &mut rng).unwrap();
            let got = source_frames(&sampled);
            assert_eq!(got.len(), 64);
            assert!(got.windows(2).all(|w| w[0] < w[1]), "seed {seed}");
            assert!(got.iter().all(|&v| v < 100), "seed {seed}");
        }
    }

    #[test]
    fn random_sampling_full_length_is_identity_set() {
        let clip = tagged(64);
        let mut rng = Rng::new(3);
        let sampled = sample_frames_random(&clip, 64, &mut rng).unwrap();
        assert_eq!(source_frames(&sampled), (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn random_sampling_is_deterministic_given_seed() {
        let clip = tagged(40);
        let a = sample_frames_random(&clip, 64, &mut Rng::new(9)).unwrap();
        let b = sample_frames_random(&clip, 64, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        // Short clip: with replacement, sorted.
        assert!(source_frames(&a).windows(2).all(|w| w[0] <= w[1]));
    }

    fn wiggly(t: usize, j: usize, c: usize) -> SkeletonClip {
        clip_from(t, j, c, |ti, ji, ci| {
            ((ti * 7 + ji * 3 + ci * 5) as f32 * 0.37).sin() + ji as f32 * 0.5
        })
    }

    #[test]
    fn normalization_puts_hip_exactly_at_origin() {
        let clip = wiggly(5, 4, 3);
        let normed = normalize_hip_center_scale(&clip, 2).unwrap();
        for t in 0..5 {
            for c in 0..3 {
                assert_eq!(normed.get(0, t, 2, c), 0.0);
            }
        }
    }

    #[test]
    fn normalization_is_translation_invariant() {
        let clip = wiggly(5, 4, 2);
        let shifted = clip_from(5, 4, 2, |t, j, c| {
            clip.get(0, t, j, c) + if c == 0 { 5.0 } else { -3.0 }
        });
        let a = normalize_hip_center_scale(&clip, 0).unwrap();
        let b = normalize_hip_center_scale(&shifted, 0).unwrap();
        for (x, y) in a.joints().iter().zip(b.joints()) {
            assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let clip = wiggly(4, 5, 3);
        let a = normalize_hip_center_scale(&clip, 1).unwrap();
        // Power-of-two scaling is exact in floats, so outputs match bit-wise.
        let doubled = clip_from(4, 5, 3, |t, j, c| clip.get(0, t, j, c) * 2.0);
        let b = normalize_hip_center_scale(&doubled, 1).unwrap();
        assert_eq!(a.joints(), b.joints());
        // Arbitrary scaling matches within rounding.
        let scaled = clip_from(4, 5, 3, |t, j, c| clip.get(0, t, j, c) * 3.7);
        let c = normalize_hip_center_scale(&scaled, 1).unwrap();
        for (x, y) in a.joints().iter().zip(c.joints()) {
            assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn normalization_is_idempotent() {
        let clip = wiggly(6, 3, 2);
        let once = normalize_hip_center_scale(&clip, 0).unwrap();
        let twice = normalize_hip_center_scale(&once, 0).unwrap();
        for (x, y) in once.joints().iter().zip(twice.joints()) {
            assert!((x - y).abs() <= 1e-7, "{x} vs {y}");
        }
    }

    #[test]
    fn normalization_rejects_degenerate_clip_and_bad_hip() {
        let flat = clip_from(3, 4, 2, |_, _, _| 2.5);
        assert!(normalize_hip_center_scale(&flat, 0).is_err());
        let clip = wiggly(3, 4, 2);
        assert!(normalize_hip_center_scale(&clip, 4).is_err());
    }

    #[test]
    fn disabled_augmentation_is_identity() {
        let clip = wiggly(4, 3, 2);
        let mut rng = Rng::new(1);
        let out = augment(&clip, &AugmentConfig::disabled(), &mut rng).unwrap();
        assert_eq!(out, clip);
    }

    #[test]
    fn rotation_inverts() {
        for &coords in &[2usize, 3] {
            let clip = wiggly(4, 3, coords);
            let theta = 0.83;
            let forward = AugmentConfig {
                rotation: Some((theta, theta)),
                ..AugmentConfig::disabled()
            };
            let backward = AugmentConfig {
                rotation: Some((-theta, -theta)),
                ..AugmentConfig::disabled()
            };
            let rotated = augment(&clip, &forward, &mut Rng::new(2)).unwrap();
            let restored = augment(&rotated, &backward, &mut Rng::new(3)).unwrap();
            for (x, y) in clip.joints().iter().zip(restored.joints()) {
                assert!((x - y).abs() <= 1e-6, "coords {coords}: {x} vs {y}");
            }
            // 3D rotation about axis 1 leaves that axis untouched.
            if coords == 3 {
                for t in 0..4 {
                    for j in 0..3 {
                        assert_eq!(rotated.get(0, t, j, 1), clip.get(0, t, j, 1));
                    }
                }
            }
        }
    }

    #[test]
    fn joint_drop_probability_one_zeroes_everything() {
        let clip = wiggly(3, 4, 2);
        let cfg = AugmentConfig {
            joint_drop_prob: 1.0,
            ..AugmentConfig::disabled()
        };
        let out = augment(&clip, &cfg, &mut Rng::new(4)).unwrap();
        assert!(out.joints().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn axis_drop_zeroes_exactly_one_axis() {
        let clip = wiggly(3, 4, 3);
        let cfg = AugmentConfig {
            axis_drop_prob: 1.0,
            ..AugmentConfig::disabled()
        };
        let out = augment(&clip, &cfg, &mut Rng::new(5)).unwrap();
        let zeroed: Vec<usize> = (0..3)
            .filter(|&c| (0..3).all(|t| (0..4).all(|j| out.get(0, t, j, c) == 0.0)))
            .collect();
        assert_eq!(zeroed.len(), 1, "one axis zeroed, got {zeroed:?}");
        let kept = (0..3).find(|c| !zeroed.contains(c)).unwrap();
        assert_eq!(out.get(0, 1, 1, kept), clip.get(0, 1, 1, kept));
    }

    #[test]
    fn augment_config_validation() {
        let bad_scale = AugmentConfig {
            scale: Some((0.0, 1.0)),
            ..AugmentConfig::disabled()
        };
        assert!(bad_scale.validate().is_err());
        let bad_prob = AugmentConfig {
            joint_drop_prob: 1.5,
            ..AugmentConfig::disabled()
        };
        assert!(bad_prob.validate().is_err());
        let reversed = AugmentConfig {
            rotation: Some((1.0, -1.0)),
            ..AugmentConfig::disabled()
        };
        assert!(reversed.validate().is_err());
    }

    fn two_joint_clip(parent: (f32, f32), child: (f32, f32)) -> SkeletonClip {
        SkeletonClip::new(
            1,
            1,
            2,
            2,
            vec![parent.0, parent.1, child.0, child.1],
            0,
            None,
        )
        .unwrap()
    }

    #[test]
    fn bone_subtract_and_concat_examples() {
        let clip = two_joint_clip((0.0, 0.0), (1.0, 2.0));
        let topo = SkeletonTopology::chain(2).unwrap();
        let sub = to_bone_representation(&clip, &topo, BoneMode::Subtract).unwrap();
        assert_eq!(sub.shape(), &[1, 1, 2]);
        assert_eq!(sub.data(), &[1.0, 2.0]);
        let cat = to_bone_representation(&clip, &topo, BoneMode::Concat).unwrap();
        assert_eq!(cat.shape(), &[1, 1, 4]);
        assert_eq!(cat.data(), &[0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn bone_parameterize_line_fit() {
        // Line through (1,1) and (3,5): slope (5-1)/(3-1) = 2, intercept
        // 1 - 2*1 = -1.
        let clip = two_joint_clip((1.0, 1.0), (3.0, 5.0));
        let topo = SkeletonTopology::chain(2).unwrap();
        let par = to_bone_representation(&clip, &topo, BoneMode::Parameterize).unwrap();
        assert_eq!(par.shape(), &[1, 1, 2]);
        assert_eq!(par.data(), &[2.0, -1.0]);
    }

    #[test]
    fn bone_parameterize_clamps_vertical_bones() {
        let up = two_joint_clip((2.0, 0.0), (2.0, 3.0));
        let topo = SkeletonTopology::chain(2).unwrap();
        let par = to_bone_representation(&up, &topo, BoneMode::Parameterize).unwrap();
        assert_eq!(par.data()[0], 1e8);
        let down = two_joint_clip((2.0, 3.0), (2.0, 0.0));
        let par = to_bone_representation(&down, &topo, BoneMode::Parameterize).unwrap();
        assert_eq!(par.data()[0], -1e8);
    }

    #[test]
    fn bone_subtract_is_translation_invariant() {
        // Quarter-grid coordinates keep the +7.25 shift exact in f32, so the
        // invariance check can demand bit equality.
        let clip = clip_from(3, 4, 2, |t, j, c| (t * 8 + j * 2 + c) as f32 * 0.25);
        let shifted = clip_from(3, 4, 2, |t, j, c| clip.get(0, t, j, c) + 7.25);
        let topo = SkeletonTopology::chain(4).unwrap();
        let a = to_bone_representation(&clip, &topo, BoneMode::Subtract).unwrap();
        let b = to_bone_representation(&shifted, &topo, BoneMode::Subtract).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn bone_mode_rejections() {
        let clip3d = clip_from(2, 3, 3, |t, j, c| (t + j + c) as f32);
        let topo = SkeletonTopology::chain(3).unwrap();
        assert!(to_bone_representation(&clip3d, &topo, BoneMode::Parameterize).is_err());
        assert!(to_bone_representation(&clip3d, &topo, BoneMode::Subtract).is_ok());
        let mismatched = SkeletonTopology::chain(5).unwrap();
        assert!(to_bone_representation(&clip3d, &mismatched, BoneMode::Subtract).is_err());
    }
}
