//! The cascade: per-stage U-Net blocks, the shared geometry transfer
//! network, and fusion between stages.

pub mod checkpoint;
mod config;
pub mod fusion;
pub mod gtn;
mod init;
mod markup;
mod model;
pub mod unet;

#[cfg(test)]
mod tests;

pub use config::{ChannelWindow, ModelConfig, StreamSplit, Variant, DOWNSAMPLES, POSE_SCALE_DEG};
pub use gtn::{GtnOutput, MarkupHead};
pub use markup::{Markup, MarkupChain, MARKUP_3D};
pub use model::{AcdcModel, Prediction, StageOutput};
