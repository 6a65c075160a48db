//! Synthetic skeleton corpus generator.
//!
//! Every class shares the same per-joint rest pose, so single frames carry
//! almost no class signal; classes differ only in the frequency, amplitude,
//! and phase of per-joint sinusoidal motion. Recognizing them therefore
//! requires temporal modeling, which is exactly what the pipeline under test
//! must provide.

use crate::data::clip::{Dataset, SkeletonClip, SkeletonTopology};
use crate::error::{Error, Result};
use crate::rng::{stream_label, Rng};

/// Builds `n_classes * clips_per_class` single-person clips of `frames`
/// frames each. Deterministic in `seed`; clip noise is drawn from a stream
/// derived per (class, clip), so corpora of different sizes share their
/// common prefix.
#[allow(clippy::too_many_arguments)]
pub fn generate_synthetic(
    n_classes: usize,
    clips_per_class: usize,
    frames: usize,
    joint_count: usize,
    coords: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    if clips_per_class == 0 || frames == 0 || joint_count == 0 {
        return Err(Error::Config(
            "clips per class, frames, and joints must be positive".into(),
        ));
    }
    if coords != 2 && coords != 3 {
        return Err(Error::Config(format!(
            "coordinate count must be 2 or 3, got {coords}"
        )));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::Config(format!("bad noise sigma {noise_sigma}")));
    }

    // Class templates come from one derived stream: a shared rest pose, then
    // per-class amplitude and phase for every (joint, coord) series.
    let mut template_rng = Rng::derive(seed, &[stream_label("synthetic-template")]);
    let series = joint_count * coords;
    let base: Vec<f64> = (0..series).map(|_| template_rng.uniform(-1.0, 1.0)).collect();
    let mut amplitude = Vec::with_capacity(n_classes * series);
    let mut phase = Vec::with_capacity(n_classes * series);
    for _ in 0..n_classes {
        for _ in 0..series {
            amplitude.push(template_rng.uniform(0.3, 0.7));
            phase.push(template_rng.uniform(0.0, std::f64::consts::TAU));
        }
    }

    let mut clips = Vec::with_capacity(n_classes * clips_per_class);
    for class in 0..n_classes {
        let frequency = (class + 1) as f64;
        for clip_index in 0..clips_per_class {
            let mut noise_rng = Rng::derive(
                seed,
                &[
                    stream_label("synthetic-noise"),
                    class as u64,
                    clip_index as u64,
                ],
            );
            let mut joints = Vec::with_capacity(frames * series);
            for t in 0..frames {
                let angle = std::f64::consts::TAU * frequency * t as f64 / frames as f64;
                for (s, &b) in base.iter().enumerate() {
                    let k = class * series + s;
                    let mut v = b + amplitude[k] * (angle + phase[k]).sin();
                    if noise_sigma > 0.0 {
                        v += noise_sigma * noise_rng.next_normal();
                    }
                    joints.push(v as f32);
                }
            }
            clips.push(SkeletonClip::new(
                1,
                frames,
                joint_count,
                coords,
                joints,
                class,
                None,
            )?);
        }
    }

    let topology = if joint_count >= 2 {
        Some(SkeletonTopology::chain(joint_count)?)
    } else {
        None
    };
    Ok(Dataset {
        clips,
        joint_count,
        coords,
        class_names: (0..n_classes).map(|k| format!("class_{k}")).collect(),
        topology,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(3, 4, 16, 5, 2, 0.05, 42).unwrap();
        let b = generate_synthetic(3, 4, 16, 5, 2, 0.05, 42).unwrap();
        assert_eq!(a.clips.len(), 12);
        for (x, y) in a.clips.iter().zip(&b.clips) {
            assert_eq!(x, y);
        }
        let c = generate_synthetic(3, 4, 16, 5, 2, 0.05, 43).unwrap();
        assert!(a.clips.iter().zip(&c.clips).any(|(x, y)| x != y));
    }

    #[test]
    fn zero_noise_makes_same_class_clips_identical() {
        let data = generate_synthetic(2, 3, 12, 4, 3, 0.0, 7).unwrap();
        let class0: Vec<_> = data.clips.iter().filter(|c| c.label() == 0).collect();
        assert_eq!(class0.len(), 3);
        assert_eq!(class0[0], class0[1]);
        assert_eq!(class0[1], class0[2]);
        let class1: Vec<_> = data.clips.iter().filter(|c| c.label() == 1).collect();
        assert_ne!(class0[0].joints(), class1[0].joints());
    }

    #[test]
    fn per_class_counts_match_request() {
        let data = generate_synthetic(4, 10, 8, 3, 2, 0.1, 5).unwrap();
        assert_eq!(data.clips.len(), 40);
        assert_eq!(data.class_counts(), vec![10, 10, 10, 10]);
        assert_eq!(data.class_names.len(), 4);
        data.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        assert!(generate_synthetic(1, 4, 8, 3, 2, 0.0, 1).is_err());
        assert!(generate_synthetic(2, 0, 8, 3, 2, 0.0, 1).is_err());
        assert!(generate_synthetic(2, 4, 8, 3, 4, 0.0, 1).is_err());
        assert!(generate_synthetic(2, 4, 8, 3, 2, -0.1, 1).is_err());
        assert!(generate_synthetic(2, 4, 8, 3, 2, f64::NAN, 1).is_err());
    }

    /// Leave-one-out 1-nearest-neighbor on raw flattened clips: a brute-force
    /// separability oracle that involves none of the model machinery.
    #[test]
    fn classes_are_separable_by_nearest_neighbor() {
        let data = generate_synthetic(4, 20, 32, 13, 2, 0.05, 11).unwrap();
        let n = data.clips.len();
        let mut correct = 0;
        for i in 0..n {
            let mut best = usize::MAX;
            let mut best_dist = f64::INFINITY;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dist: f64 = data.clips[i]
                    .joints()
                    .iter()
                    .zip(data.clips[j].joints())
                    .map(|(&a, &b)| {
                        let d = f64::from(a) - f64::from(b);
                        d * d
                    })
                    .sum();
                if dist < best_dist {
                    best_dist = dist;
                    best = j;
                }
            }
            if data.clips[best].label() == data.clips[i].label() {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / n as f64;
        assert!(accuracy > 0.95, "LOO 1-NN accuracy {accuracy}");
    }

    #[test]
    fn rest_pose_is_shared_across_classes() {
        // With zero noise, the temporal mean of each series approximates the
        // class-independent base pose; class means must nearly coincide.
        let data = generate_synthetic(3, 1, 256, 4, 2, 0.0, 19).unwrap();
        let series = 4 * 2;
        let mean_of = |clip: &SkeletonClip| -> Vec<f64> {
            let mut m = vec![0.0; series];
            for t in 0..clip.frames() {
                for (s, acc) in m.iter_mut().enumerate() {
                    *acc += f64::from(clip.joints()[t * series + s]);
                }
            }
            m.iter().map(|v| v / clip.frames() as f64).collect()
        };
        let m0 = mean_of(&data.clips[0]);
        let m1 = mean_of(&data.clips[1]);
        let m2 = mean_of(&data.clips[2]);
        for s in 0..series {
            // A whole number of sinusoid periods averages to ~0, leaving base.
            assert!((m0[s] - m1[s]).abs() < 1e-6, "series {s}: {} vs {}", m0[s], m1[s]);
            assert!((m0[s] - m2[s]).abs() < 1e-6, "series {s}: {} vs {}", m0[s], m2[s]);
        }
    }
}
