use std::collections::BTreeMap;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pose::{rotation, PoseAngles, Projection};
use super::render::{deformed_curves, render};
use super::template::{FaceTemplate, Point3};
use crate::architecture::MarkupChain;
use crate::error::{Error, Result};

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Intensities in `[0, 1]`.
    pub fn unit_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().map(|p| *p as f64 / 255.0)
    }
}

/// Landmark coordinates in pixels, zero-indexed pixel centers.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// An image with whatever annotations its dataset exposes.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    /// Keyed by markup name.
    pub landmarks: BTreeMap<String, LandmarkSet>,
    pub pose: Option<PoseAngles>,
}

impl Sample {
    pub fn has_markup(&self, name: &str) -> bool {
        self.landmarks.contains_key(name)
    }

    pub fn has_pose(&self) -> bool {
        self.pose.is_some()
    }
}

fn default_yaw() -> [f64; 2] {
    [-60.0, 60.0]
}

fn default_tilt() -> [f64; 2] {
    [-20.0, 20.0]
}

fn default_jitter() -> f64 {
    1.0
}

fn default_scale() -> [f64; 2] {
    [0.28, 0.34]
}

fn default_shift() -> f64 {
    0.05
}

/// Parameters of the synthetic face generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub image_size: usize,
    /// 2d markup landmark counts, descending.
    pub markups: Vec<usize>,
    pub markup_3d: usize,
    #[serde(default = "default_yaw")]
    pub yaw: [f64; 2],
    #[serde(default = "default_tilt")]
    pub pitch: [f64; 2],
    #[serde(default = "default_tilt")]
    pub roll: [f64; 2],
    /// Scales the non-rigid deformation (mouth, brows, jaw); 0 disables it.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Pixels per model unit as a fraction of the image size.
    #[serde(default = "default_scale")]
    pub scale: [f64; 2],
    /// Maximum face-center offset as a fraction of the image size.
    #[serde(default = "default_shift")]
    pub shift: f64,
}

impl GeneratorConfig {
    pub fn new(image_size: usize, markups: Vec<usize>, markup_3d: usize) -> Self {
        GeneratorConfig {
            image_size,
            markups,
            markup_3d,
            yaw: default_yaw(),
            pitch: default_tilt(),
            roll: default_tilt(),
            jitter: default_jitter(),
            scale: default_scale(),
            shift: default_shift(),
        }
    }

    pub fn chain(&self) -> Result<MarkupChain> {
        MarkupChain::from_counts(&self.markups, self.markup_3d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let within = |r: [f64; 2], lim: f64| r[0] <= r[1] && r[0] >= -lim && r[1] <= lim;
        if !within(self.yaw, 90.0) {
            return bad(format!("yaw range {:?} outside [-90, 90]", self.yaw));
        }
        if !within(self.pitch, 45.0) || !within(self.roll, 45.0) {
            return bad(format!(
                "pitch {:?} / roll {:?} outside [-45, 45]",
                self.pitch, self.roll
            ));
        }
        if self.image_size < 8 {
            return bad(format!("image size {} is too small", self.image_size));
        }
        if !(self.scale[0] > 0.0 && self.scale[0] <= self.scale[1]) || self.shift < 0.0 || self.jitter < 0.0 {
            return bad("scale, shift and jitter must be positive ranges".into());
        }
        self.chain()?;
        Ok(())
    }
}

/// Non-rigid expression and shape offsets of one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Deformation {
    pub mouth_open: f64,
    pub brow_raise: f64,
    pub jaw_width: f64,
}

impl Deformation {
    pub const NONE: Deformation = Deformation {
        mouth_open: 0.0,
        brow_raise: 0.0,
        jaw_width: 0.0,
    };

    fn draw(rng: &mut ChaCha8Rng, amount: f64) -> Self {
        Deformation {
            mouth_open: rng.random_range(0.0..=0.03) * amount,
            brow_raise: rng.random_range(-0.01..=0.01) * amount,
            jaw_width: rng.random_range(-0.025..=0.025) * amount,
        }
    }

    /// Eye corners, pupils, nose, chin and mouth corners stay fixed.
    pub fn apply(&self, p: &Point3) -> Point3 {
        let ramp = |t: f64| t.clamp(0.0, 1.0);
        let mut q = *p;
        if p.x.abs() < 0.34 && p.y > 0.45 && p.y < 0.75 {
            let lateral = (1.0 - (p.x / 0.3).powi(2)).max(0.0);
            // Lips part symmetrically about the corner line.
            q.y += self.mouth_open * lateral * ((p.y - 0.58) / 0.035).clamp(-1.0, 1.0);
        }
        q.y -= self.brow_raise * ramp((-0.38 - p.y) / 0.06);
        q.x *= 1.0 + self.jaw_width * ramp((p.x.abs() - 0.35) / 0.3) * ramp((p.y - 0.2) / 0.3);
        q
    }
}

/// Every markup's ground truth for one posed, deformed face.
pub fn annotate(template: &FaceTemplate, proj: &Projection, deform: &Deformation) -> BTreeMap<String, LandmarkSet> {
    let superset: Vec<[f64; 2]> = template
        .superset_points()
        .iter()
        .map(|p| proj.project(&deform.apply(p)))
        .collect();
    let three: Vec<[f64; 2]> = template
        .points_3d()
        .iter()
        .map(|p| proj.project(&deform.apply(p)))
        .collect();
    let n2 = template.chain().depth();
    template
        .maps()
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let src = if k < n2 { &superset } else { &three };
            (
                m.name.clone(),
                LandmarkSet {
                    points: FaceTemplate::reduce(m, src),
                },
            )
        })
        .collect()
}

pub const MAX_FRAMING_ATTEMPTS: usize = 100;

/// Fully annotated sample, a pure function of `seed`.
pub fn generate_sample(cfg: &GeneratorConfig, template: &FaceTemplate, seed: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
        if r[0] == r[1] {
            r[0]
        } else {
            rng.random_range(r[0]..=r[1])
        }
    };
    let pose = PoseAngles::new(
        uniform(&mut rng, cfg.yaw),
        uniform(&mut rng, cfg.pitch),
        uniform(&mut rng, cfg.roll),
    );
    let deform = Deformation::draw(&mut rng, cfg.jitter);
    let size = cfg.image_size as f64;
    let rot = rotation(pose);
    for _ in 0..MAX_FRAMING_ATTEMPTS {
        let scale = uniform(&mut rng, cfg.scale) * size;
        let center = (size - 1.0) / 2.0;
        let shift = cfg.shift * size;
        let t = Vector2::new(
            center + uniform(&mut rng, [-shift, shift]),
            center + uniform(&mut rng, [-shift, shift]),
        );
        let proj = Projection {
            rotation: rot,
            scale,
            translation: t,
        };
        let landmarks = annotate(template, &proj, &deform);
        let inside = landmarks
            .values()
            .flat_map(|s| s.points.iter())
            .all(|p| p.iter().all(|c| *c >= 0.0 && *c <= size - 1.0));
        if !inside {
            continue;
        }
        let curves = deformed_curves(48, |p| deform.apply(p));
        let pupils = [
            deform.apply(&super::template::curve_point(super::template::Curve::EyeRight, 0.0)),
            deform.apply(&super::template::curve_point(super::template::Curve::EyeLeft, 0.0)),
        ]
        .map(|corner| {
            let mut c = corner;
            c.x += if c.x < 0.0 { 0.14 } else { -0.14 };
            c
        });
        let image = render(&proj, &curves, pupils, cfg.image_size, &mut rng);
        return Ok(Sample {
            image,
            landmarks,
            pose: Some(pose),
        });
    }
    Err(Error::InvalidArgument(format!(
        "face does not fit a {}-pixel frame after {MAX_FRAMING_ATTEMPTS} attempts",
        cfg.image_size
    )))
}
