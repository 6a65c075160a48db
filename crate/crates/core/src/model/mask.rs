//! Pretraining mask construction.
//!
//! Masked positions are (frame, joint) pairs whose coordinates are zeroed in
//! the model input and which alone contribute to the reconstruction loss.
//! Counts are exact floors of the requested ratio, not Bernoulli draws, so
//! every clip honors the ratio to within one position.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Mask individual (frame, joint) positions.
    Joint,
    /// Mask whole frames.
    Frame,
    /// No masking; pretraining reconstructs the full sequence.
    None,
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskMode::Joint => "joint",
            MaskMode::Frame => "frame",
            MaskMode::None => "none",
        })
    }
}

/// A concrete mask over `[batch x frames x joints]` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub mode: MaskMode,
    pub ratio: f64,
    batch: usize,
    frames: usize,
    joints: usize,
    masked: Vec<bool>,
}

impl MaskSpec {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    /// Row-major `[batch x frames x joints]` flags.
    pub fn masked(&self) -> &[bool] {
        &self.masked
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    /// An all-false mask (mode none).
    pub fn none(batch: usize, frames: usize, joints: usize) -> Self {
        Self {
            mode: MaskMode::None,
            ratio: 0.0,
            batch,
            frames,
            joints,
            masked: vec![false; batch * frames * joints],
        }
    }

    /// Stacks per-clip masks into one batch mask of `t_max` frames; frames
    /// beyond a clip's own length stay unmasked.
    pub fn stack(specs: &[Self], t_max: usize) -> Result<Self> {
        let first = specs
            .first()
            .ok_or_else(|| Error::Config("cannot stack zero masks".into()))?;
        let mut masked = Vec::new();
        let mut batch = 0;
        for spec in specs {
            if spec.joints != first.joints || spec.mode != first.mode {
                return Err(Error::Config(
                    "stacked masks must share joint count and mode".into(),
                ));
            }
            if spec.frames > t_max {
                return Err(Error::shape(
                    "mask stack frames",
                    &[spec.frames],
                    &[t_max],
                ));
            }
            for b in 0..spec.batch {
                let row = &spec.masked[b * spec.frames * spec.joints..(b + 1) * spec.frames * spec.joints];
                masked.extend_from_slice(row);
                masked.extend(std::iter::repeat_n(false, (t_max - spec.frames) * spec.joints));
            }
            batch += spec.batch;
        }
        Ok(Self {
            mode: first.mode,
            ratio: first.ratio,
            batch,
            frames: t_max,
            joints: first.joints,
            masked,
        })
    }

    /// Zeroes the masked positions of a `[B x C x T x J]` batch tensor.
    pub fn apply<F: Real>(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let s = x.shape();
        if s.len() != 4 || s[0] != self.batch || s[2] != self.frames || s[3] != self.joints {
            return Err(Error::shape(
                "mask apply",
                s,
                &[self.batch, 0, self.frames, self.joints],
            ));
        }
        let c_len = s[1];
        let mut out = x.clone();
        for b in 0..self.batch {
            for t in 0..self.frames {
                for j in 0..self.joints {
                    if self.masked[(b * self.frames + t) * self.joints + j] {
                        for c in 0..c_len {
                            let idx = ((b * c_len + c) * self.frames + t) * self.joints + j;
                            out.data_mut()[idx] = F::ZERO;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Expands per-frame validity to per-(frame, joint) selection flags, the
/// position set of the full-reconstruction loss.
pub fn expand_frame_validity(frame_valid: &[bool], joints: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(frame_valid.len() * joints);
    for &v in frame_valid {
        out.extend(std::iter::repeat_n(v, joints));
    }
    out
}

/// Builds a single-clip mask over `t_valid` frames.
///
/// Joint mode draws exactly `floor(ratio * t_valid * joints)` distinct
/// positions; frame mode masks `floor(ratio * t_valid)` whole frames; mode
/// none masks nothing and ignores the ratio. Too-short clips (a floor of
/// zero) are a config error for the masked modes.
pub fn make_mask(
    mode: MaskMode,
    ratio: f64,
    t_valid: usize,
    joints: usize,
    rng: &mut Rng,
) -> Result<MaskSpec> {
    if t_valid == 0 || joints == 0 {
        return Err(Error::Config("mask needs at least one frame and joint".into()));
    }
    if mode == MaskMode::None {
        return Ok(MaskSpec::none(1, t_valid, joints));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!(
            "mask ratio must be in (0, 1], got {ratio}"
        )));
    }
    let mut masked = vec![false; t_valid * joints];
    match mode {
        MaskMode::Joint => {
            let positions = t_valid * joints;
            let count = (ratio * positions as f64).floor() as usize;
            if count == 0 {
                return Err(Error::Config(format!(
                    "ratio {ratio} of {positions} positions masks nothing; clip too short"
                )));
            }
            for p in rng.sample_without_replacement(positions, count) {
                masked[p] = true;
            }
        }
        MaskMode::Frame => {
            let count = (ratio * t_valid as f64).floor() as usize;
            if count == 0 {
                return Err(Error::Config(format!(
                    "ratio {ratio} of {t_valid} frames masks nothing; clip too short"
                )));
            }
            for t in rng.sample_without_replacement(t_valid, count) {
                masked[t * joints..(t + 1) * joints].fill(true);
            }
        }
        MaskMode::None => unreachable!(),
    }
    Ok(MaskSpec {
        mode,
        ratio,
        batch: 1,
        frames: t_valid,
        joints,
        masked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_mode_masks_the_exact_floor_count() {
        // ratio 0.3 of 16 x 13 = 208 positions: floor(62.4) = 62.
        let mut rng = Rng::new(1);
        let spec = make_mask(MaskMode::Joint, 0.3, 16, 13, &mut rng).unwrap();
        assert_eq!(spec.masked_count(), 62);
        assert_eq!(spec.masked().len(), 208);
    }

    #[test]
    fn frame_mode_masks_whole_rows() {
        let mut rng = Rng::new(2);
        let spec = make_mask(MaskMode::Frame, 0.3, 10, 5, &mut rng).unwrap();
        let mut full_rows = 0;
        for t in 0..10 {
            let row = &spec.masked()[t * 5..(t + 1) * 5];
            let set = row.iter().filter(|&&m| m).count();
            assert!(set == 0 || set == 5, "frame {t} partially masked");
            full_rows += usize::from(set == 5);
        }
        assert_eq!(full_rows, 3); // floor(0.3 * 10)
    }

    #[test]
    fn none_mode_masks_nothing() {
        let mut rng = Rng::new(3);
        let spec = make_mask(MaskMode::None, 0.9, 6, 4, &mut rng).unwrap();
        assert_eq!(spec.masked_count(), 0);
        assert_eq!(spec.mode, MaskMode::None);
    }

    #[test]
    fn masked_fraction_stays_within_one_position_of_ratio() {
        for (seed, (t, j, ratio)) in [(5usize, 7usize, 0.25), (16, 13, 0.3), (9, 4, 0.61), (30, 2, 0.5)]
            .into_iter()
            .enumerate()
        {
            let mut rng = Rng::new(seed as u64);
            for mode in [MaskMode::Joint, MaskMode::Frame] {
                let spec = make_mask(mode, ratio, t, j, &mut rng).unwrap();
                let mean = spec.masked_count() as f64 / (t * j) as f64;
                // Flooring a count of n units deviates by less than one unit.
                let bound = match mode {
                    MaskMode::Joint => 1.0 / (t * j) as f64,
                    _ => 1.0 / t as f64,
                };
                assert!(
                    (mean - ratio).abs() < bound + 1e-12,
                    "{mode:?} t={t} j={j}: mean {mean} vs ratio {ratio}"
                );
            }
        }
    }

    #[test]
    fn too_short_clips_are_rejected() {
        let mut rng = Rng::new(4);
        // floor(0.3 * 1 * 2) = 0 positions.
        assert!(make_mask(MaskMode::Joint, 0.3, 1, 2, &mut rng).is_err());
        // floor(0.3 * 2) = 0 frames.
        assert!(make_mask(MaskMode::Frame, 0.3, 2, 9, &mut rng).is_err());
    }

    #[test]
    fn ratio_bounds_are_enforced_for_masked_modes() {
        let mut rng = Rng::new(5);
        assert!(make_mask(MaskMode::Joint, 0.0, 8, 4, &mut rng).is_err());
        assert!(make_mask(MaskMode::Joint, 1.2, 8, 4, &mut rng).is_err());
        let full = make_mask(MaskMode::Joint, 1.0, 8, 4, &mut rng).unwrap();
        assert_eq!(full.masked_count(), 32);
    }

    #[test]
    fn stack_pads_with_unmasked_rows() {
        let mut rng = Rng::new(6);
        let a = make_mask(MaskMode::Joint, 0.5, 3, 2, &mut rng).unwrap();
        let b = make_mask(MaskMode::Joint, 0.5, 5, 2, &mut rng).unwrap();
        let stacked = MaskSpec::stack(&[a.clone(), b.clone()], 5).unwrap();
        assert_eq!(stacked.batch(), 2);
        assert_eq!(stacked.frames(), 5);
        assert_eq!(stacked.masked_count(), a.masked_count() + b.masked_count());
        // Clip 0's frames 3..5 are padding: unmasked.
        for t in 3..5 {
            for j in 0..2 {
                assert!(!stacked.masked()[(t * 2) + j]);
            }
        }
        assert!(MaskSpec::stack(&[b], 4).is_err());
    }

    #[test]
    fn apply_zeroes_exactly_the_masked_positions() {
        let mut rng = Rng::new(7);
        let spec = make_mask(MaskMode::Joint, 0.4, 4, 3, &mut rng).unwrap();
        let x = Tensor::<f64>::from_fn([1, 2, 4, 3], |i| i as f64 + 1.0);
        let masked = spec.apply(&x).unwrap();
        for t in 0..4 {
            for j in 0..3 {
                let flagged = spec.masked()[t * 3 + j];
                for c in 0..2 {
                    let v = masked.at(&[0, c, t, j]);
                    if flagged {
                        assert_eq!(v, 0.0);
                    } else {
                        assert_eq!(v, x.at(&[0, c, t, j]));
                    }
                }
            }
        }
    }

    #[test]
    fn expand_frame_validity_repeats_per_joint() {
        let flags = expand_frame_validity(&[true, false, true], 2);
        assert_eq!(flags, vec![true, true, false, false, true, true]);
    }
}
