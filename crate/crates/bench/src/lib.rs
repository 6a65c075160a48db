//! Shared fixtures for the pipeline benchmarks: a small deterministic
//! dataset and a model sized so single steps finish in milliseconds while
//! still exercising every kernel.

use cascadeformer_core::data::{generate_synthetic, pad_batch, Batch, Dataset};
use cascadeformer_core::model::{
    CascadeFormerModel, DecoderKind, ModelConfig, PositionalEncoding, Variant,
};

pub const FRAMES: usize = 16;
pub const JOINTS: usize = 13;
pub const COORDS: usize = 2;
pub const EMBED: usize = 52;

pub fn bench_dataset() -> Dataset {
    generate_synthetic(4, 8, FRAMES, JOINTS, COORDS, 0.05, 11).expect("synthetic dataset")
}

pub fn bench_batch(dataset: &Dataset, size: usize) -> Batch<f32> {
    let clips: Vec<_> = dataset.clips.iter().take(size).collect();
    pad_batch(&clips, None).expect("batch")
}

pub fn bench_model() -> CascadeFormerModel<f32> {
    let config = ModelConfig {
        variant: Variant::V1_0,
        coords: COORDS,
        joints: JOINTS,
        embed_dim: EMBED,
        t1_layers: 2,
        t2_layers: 1,
        n_heads: 4,
        n_classes: 4,
        decoder: DecoderKind::Linear,
        conv_kernel: 3,
        st_heads: 1,
        positional: PositionalEncoding::Sinusoidal,
    };
    CascadeFormerModel::new(config, 11).expect("model")
}
