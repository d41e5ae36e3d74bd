pub mod architecture;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod metrics;
pub mod training;

pub use error::{Error, Result};
pub use architecture::{AcdcModel, ModelConfig, Variant};
pub use autodiff::{Graph, Tensor};
pub use data::{Dataset, DatasetSpec, GeneratorConfig};
pub use training::{TrainConfig, Trainer};
