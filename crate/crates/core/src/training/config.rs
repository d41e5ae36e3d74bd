use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LR_POWER: f64 = 0.9;

fn default_lambdas() -> Vec<f64> {
    vec![0.125, 0.25, 0.5, 1.0]
}

fn default_lr() -> f64 {
    5e-4
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_batch() -> usize {
    8
}

fn default_pose_weight() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Per-stage supervision weights, one per stage, ascending.
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// Total updates `T`, spread round-robin over the datasets.
    pub updates: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Multiplier of the pose term relative to the landmark term.
    #[serde(default = "default_pose_weight")]
    pub pose_weight: f64,
    /// Write a checkpoint every this many updates; `0` only at the end.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(updates: usize, seed: u64) -> Self {
        TrainConfig {
            lambdas: default_lambdas(),
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            updates,
            batch_size: default_batch(),
            seed,
            pose_weight: default_pose_weight(),
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| l.is_nan() || *l <= 0.0) {
            return bad(format!("supervision weights must be positive: {:?}", self.lambdas));
        }
        if self.lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("supervision weights must ascend: {:?}", self.lambdas));
        }
        if self.updates == 0 {
            return bad("at least one update is required".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!(
                "learning rate {} / betas ({}, {}) out of range",
                self.learning_rate, self.beta1, self.beta2
            ));
        }
        if self.pose_weight.is_nan() || self.pose_weight < 0.0 {
            return bad(format!("pose weight {} must be non-negative", self.pose_weight));
        }
        Ok(())
    }
}

/// Polynomial decay `base * (1 - t/T)^0.9`; `t` is clamped to `[0, T]`.
pub fn lr_schedule(t: usize, total: usize, base: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let frac = t.min(total) as f64 / total as f64;
    base * (1.0 - frac).powf(LR_POWER)
}
