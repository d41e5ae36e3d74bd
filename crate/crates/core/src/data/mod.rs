//! Synthetic faces with exact multi-markup and pose ground truth, and the
//! file formats used to store them.

mod dataset;
pub mod io;
mod pose;
pub mod render;
mod sample;
pub mod template;

pub use dataset::{
    generate, generate_with_threads, generation_threads, mix64, sample_seed, strip, Dataset, DatasetSpec,
    THREADS_ENV,
};
pub use pose::{euler_from_rotation, rigid_fit, rotation, PoseAngles, Projection};
pub use sample::{
    annotate, generate_sample, Deformation, GeneratorConfig, GrayImage, LandmarkSet, Sample, MAX_FRAMING_ATTEMPTS,
};
pub use template::{FaceTemplate, MarkupMap};
