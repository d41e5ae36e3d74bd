//! Euler angles, rotations and orthographic rigid fitting.
//!
//! `R = Ry(yaw) * Rx(pitch) * Rz(roll)`: yaw about the vertical axis, then
//! pitch, then roll, applied to model-space points as `R * p`.

use nalgebra::{Matrix2x3, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use super::template::Point3;
use crate::error::{Error, Result};

/// Head pose in degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl PoseAngles {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        PoseAngles { yaw, pitch, roll }
    }

    /// `[pitch, yaw, roll]`, the order of the network's pose outputs.
    pub fn to_network_order(self) -> [f64; 3] {
        [self.pitch, self.yaw, self.roll]
    }

    pub fn from_network_order(v: [f64; 3]) -> Self {
        PoseAngles::new(v[1], v[0], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.yaw.is_finite() && self.pitch.is_finite() && self.roll.is_finite()
    }
}

pub fn rotation(p: PoseAngles) -> Matrix3<f64> {
    let (a, b, c) = (p.yaw.to_radians(), p.pitch.to_radians(), p.roll.to_radians());
    let ry = Matrix3::new(a.cos(), 0.0, a.sin(), 0.0, 1.0, 0.0, -a.sin(), 0.0, a.cos());
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, b.cos(), -b.sin(), 0.0, b.sin(), b.cos());
    let rz = Matrix3::new(c.cos(), -c.sin(), 0.0, c.sin(), c.cos(), 0.0, 0.0, 0.0, 1.0);
    ry * rx * rz
}

/// Inverse of [`rotation`] for pitch in `(-90, 90)`.
pub fn euler_from_rotation(r: &Matrix3<f64>) -> PoseAngles {
    let pitch = (-r[(1, 2)]).clamp(-1.0, 1.0).asin();
    let yaw = r[(0, 2)].atan2(r[(2, 2)]);
    let roll = r[(1, 0)].atan2(r[(1, 1)]);
    PoseAngles::new(yaw.to_degrees(), pitch.to_degrees(), roll.to_degrees())
}

/// Orthographic camera: `u = scale * (R p)_xy + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector2<f64>,
}

impl Projection {
    pub fn project(&self, p: &Point3) -> [f64; 2] {
        let q = self.rotation * p;
        [
            self.scale * q.x + self.translation.x,
            self.scale * q.y + self.translation.y,
        ]
    }

    /// Camera-space depth, larger is closer to the viewer.
    pub fn depth(&self, p: &Point3) -> f64 {
        (self.rotation * p).z
    }
}

/// Least-squares scaled-orthographic fit of `observed` image points to
/// `model` points. Returns the recovered rotation's Euler angles.
pub fn rigid_fit(model: &[Point3], observed: &[[f64; 2]]) -> Result<(PoseAngles, f64)> {
    if model.len() != observed.len() || model.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "rigid fit needs at least 4 paired points, got {} model / {} observed",
            model.len(),
            observed.len()
        )));
    }
    let n = model.len() as f64;
    let mc: Point3 = model.iter().sum::<Point3>() / n;
    let oc = observed
        .iter()
        .fold(Vector2::zeros(), |a, o| a + Vector2::new(o[0], o[1]))
        / n;
    let mut xtx = Matrix3::zeros();
    let mut utx = Matrix2x3::zeros();
    for (p, o) in model.iter().zip(observed) {
        let x = p - mc;
        let u = Vector2::new(o[0], o[1]) - oc;
        xtx += x * x.transpose();
        utx += u * x.transpose();
    }
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("model points are coplanar".into()))?;
    let m = utx * inv;
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let scale = (svd.singular_values[0] + svd.singular_values[1]) / 2.0;
    let rows = u * vt.rows(0, 2);
    let r1 = rows.row(0).transpose();
    let r2 = rows.row(1).transpose();
    let r3 = r1.cross(&r2);
    let r = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);
    Ok((euler_from_rotation(&r), scale))
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;

    use super::*;

    #[test]
    fn yaw_moves_x_by_rotation_algebra() {
        let th: f64 = 30.0;
        let proj = Projection {
            rotation: rotation(PoseAngles::new(th, 0.0, 0.0)),
            scale: 20.0,
            translation: Vector2::new(31.5, 30.0),
        };
        let (x, z) = (0.4, 0.7);
        let u = proj.project(&Vector3::new(x, 0.0, z));
        let want = 20.0 * (x * th.to_radians().cos() + z * th.to_radians().sin()) + 31.5;
        assert!((u[0] - want).abs() < 1e-12);
        assert!((u[1] - 30.0).abs() < 1e-12);
    }

    #[test]
    fn euler_round_trip() {
        for &(y, p, r) in &[(0.0, 0.0, 0.0), (60.0, -20.0, 15.0), (-85.0, 40.0, -44.0), (12.5, 3.0, -7.0)] {
            let e = euler_from_rotation(&rotation(PoseAngles::new(y, p, r)));
            assert!((e.yaw - y).abs() < 1e-9 && (e.pitch - p).abs() < 1e-9 && (e.roll - r).abs() < 1e-9);
        }
    }

    #[test]
    fn rigid_fit_recovers_exact_projection() {
        let model: Vec<Point3> = (0..10)
            .map(|i| {
                let t = i as f64;
                Vector3::new((t * 0.7).sin(), (t * 1.3).cos(), (t * 0.45).sin() * 0.6)
            })
            .collect();
        let pose = PoseAngles::new(-52.0, 17.0, 8.0);
        let proj = Projection {
            rotation: rotation(pose),
            scale: 13.0,
            translation: Vector2::new(5.0, -2.0),
        };
        let obs: Vec<[f64; 2]> = model.iter().map(|p| proj.project(p)).collect();
        let (got, scale) = rigid_fit(&model, &obs).unwrap();
        assert!((scale - 13.0).abs() < 1e-9);
        assert!((got.yaw - pose.yaw).abs() < 1e-9);
        assert!((got.pitch - pose.pitch).abs() < 1e-9);
        assert!((got.roll - pose.roll).abs() < 1e-9);
    }
}
