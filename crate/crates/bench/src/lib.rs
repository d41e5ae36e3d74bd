//! Fixtures shared by the engine benchmarks.

use acdc_core::architecture::ModelConfig;
use acdc_core::autodiff::Tensor;
use acdc_core::data::{generate, Dataset, DatasetSpec, GeneratorConfig};

/// Deterministic pseudo-random tensor with entries in `[-1, 1)`.
pub fn tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    Tensor::from_fn(shape, |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 40) as f32 / (1u64 << 23) as f32 - 1.0
    })
}

/// Small cascade at the given input size.
pub fn model_config(image_size: usize) -> ModelConfig {
    ModelConfig {
        image_size,
        ..ModelConfig::toy()
    }
}

/// Fully annotated synthetic dataset matching [`model_config`].
pub fn dataset(image_size: usize, size: usize) -> Dataset {
    let cfg = model_config(image_size);
    let g = GeneratorConfig::new(image_size, cfg.markups.clone(), cfg.markup_3d);
    generate(&DatasetSpec::full("bench", size, 1, g).expect("valid spec")).expect("generation succeeds")
}
