use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::markup::MarkupChain;
use crate::error::{Error, Result};

/// Head pose angles (degrees) are divided by this before entering or
/// leaving the network.
pub const POSE_SCALE_DEG: f64 = 90.0;

/// Which conditioning the cascade applies between stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Spatial masking only, no pose supervision.
    #[serde(rename = "ac")]
    Ac,
    /// Spatial masking with pose supervision, no excitation.
    #[serde(rename = "ac+pose", alias = "ac-pose")]
    AcPose,
    /// Spatial masking and pose-driven channel excitation.
    #[serde(rename = "acdc", alias = "ac-dc")]
    AcDc,
}

impl Variant {
    pub fn uses_excitation(self) -> bool {
        matches!(self, Variant::AcDc)
    }

    pub fn supervises_pose(self) -> bool {
        !matches!(self, Variant::Ac)
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Ac => "AC",
            Variant::AcPose => "AC+Pose",
            Variant::AcDc => "AC-DC",
        }
    }
}

/// Channel window `[start, start + len)` of the stage embedding read by one
/// geometry stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelWindow {
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSplit {
    pub two_d: ChannelWindow,
    pub three_d: ChannelWindow,
    /// Output channels of each stream's depthwise-separable convolution.
    pub width: usize,
}

impl StreamSplit {
    /// Two overlapping windows of three quarters of the embedding each.
    pub fn default_for(channels: usize) -> Self {
        let len = channels * 3 / 4;
        StreamSplit {
            two_d: ChannelWindow { start: 0, len },
            three_d: ChannelWindow {
                start: channels - len,
                len,
            },
            width: len,
        }
    }
}

fn default_stages() -> usize {
    4
}

fn default_in_channels() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Square input extent in pixels.
    pub image_size: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default = "default_stages")]
    pub stages: usize,
    /// Output channels of the six encoder convolutions. The first entry is
    /// also the embedding width `C`.
    pub widths: [usize; 6],
    /// Landmark counts of the 2d markup chain, descending.
    pub markups: Vec<usize>,
    pub markup_3d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub streams: Option<StreamSplit>,
    pub variant: Variant,
    /// Cut the gradient path from the excitation back into the pose head.
    #[serde(default)]
    pub detach_pose: bool,
}

/// Number of stride-2 convolutions in each encoder.
pub const DOWNSAMPLES: usize = 2;

impl ModelConfig {
    /// The full-size configuration: 128x128 input, 64..256 channels,
    /// 98/68/5 markups and a 68-point 3d markup.
    pub fn full_size() -> Self {
        ModelConfig {
            image_size: 128,
            in_channels: 1,
            stages: 4,
            widths: [64, 64, 128, 128, 256, 256],
            markups: vec![98, 68, 5],
            markup_3d: 68,
            streams: None,
            variant: Variant::AcDc,
            detach_pose: false,
        }
    }

    /// Small configuration used by the gradient suite.
    pub fn toy() -> Self {
        ModelConfig {
            image_size: 32,
            in_channels: 1,
            stages: 4,
            widths: [8, 8, 16, 16, 32, 32],
            markups: vec![12, 8, 3],
            markup_3d: 6,
            streams: None,
            variant: Variant::AcDc,
            detach_pose: false,
        }
    }

    pub fn embedding_channels(&self) -> usize {
        self.widths[0]
    }

    /// Channels of the fused stage input: `I | I*mask | H | H*mask`.
    pub fn fusion_channels(&self) -> usize {
        2 * self.in_channels + 2 * self.embedding_channels()
    }

    pub fn streams(&self) -> StreamSplit {
        self.streams
            .unwrap_or_else(|| StreamSplit::default_for(self.embedding_channels()))
    }

    pub fn chain(&self) -> Result<MarkupChain> {
        MarkupChain::from_counts(&self.markups, self.markup_3d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.stages == 0 {
            return bad("at least one stage is required".into());
        }
        if self.in_channels == 0 || self.widths.contains(&0) {
            return bad(format!("channel widths must be positive: {:?}", self.widths));
        }
        let step = 1 << DOWNSAMPLES;
        if self.image_size == 0 || !self.image_size.is_multiple_of(step) {
            return bad(format!(
                "image size {} is not divisible by {step}",
                self.image_size
            ));
        }
        self.chain()?;
        let c = self.embedding_channels();
        let s = self.streams();
        for (name, w) in [("2d", s.two_d), ("3d", s.three_d)] {
            if w.len == 0 || w.start + w.len > c {
                return bad(format!(
                    "{name} stream window {}..{} exceeds {c} embedding channels",
                    w.start,
                    w.start + w.len
                ));
            }
        }
        if s.width == 0 {
            return bad("stream width must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut out = [0u8; 32];
        out.copy_from_slice(&Sha256::digest(&bytes));
        out
    }
}
