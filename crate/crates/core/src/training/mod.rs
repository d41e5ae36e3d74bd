//! Deeply supervised multi-dataset training with Adam.

mod adam;
mod batch;
mod config;
mod loss;
mod trainer;


pub use adam::{Adam, ADAM_EPSILON};
pub use batch::{Batch, BatchSampler};
pub use config::{lr_schedule, TrainConfig, LR_POWER};
pub use loss::{landmark_loss, pose_loss, total_loss, LossTerms};
pub use trainer::{Trainer, UpdateRecord, LOG_HEADER};
