//! Skeleton data handling: the clip/dataset model, SKL1 file I/O, frame
//! samplers, normalization, augmentation, bone representations, and a
//! synthetic corpus generator for end-to-end runs.

mod clip;
mod preprocess;
mod skl;
mod synthetic;

pub use clip::{
    drop_occluded_frames, pad_batch, select_most_active_person, split_holdout, Batch, Dataset,
    SkeletonClip, SkeletonTopology,
};
pub use preprocess::{
    augment, normalize_hip_center_scale, sample_frames_center, sample_frames_random,
    to_bone_representation, AugmentConfig, BoneMode,
};
pub use skl::{load_dataset, save_dataset};
pub use synthetic::generate_synthetic;
