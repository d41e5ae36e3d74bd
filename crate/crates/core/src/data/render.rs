//! Grayscale rendering of a posed face: shaded head ellipsoid, dark
//! feature strokes that fade as their surface turns away, sensor noise.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::pose::Projection;
use super::sample::GrayImage;
use super::template::{surface_normal, Curve, FaceTemplate, Point3, HEAD_RADII};

/// Per-curve ink strength and stroke width in model units.
fn style(c: Curve) -> (f64, f64) {
    match c {
        Curve::Jaw => (0.35, 0.035),
        Curve::BrowRight | Curve::BrowLeft => (0.75, 0.05),
        Curve::NoseBridge => (0.3, 0.035),
        Curve::NoseBase => (0.6, 0.04),
        Curve::EyeRight | Curve::EyeLeft => (0.8, 0.03),
        Curve::MouthOuter => (0.7, 0.035),
        Curve::MouthInner => (0.85, 0.03),
    }
}

/// Front-surface hit of the orthographic ray through camera-plane point
/// `(x, y)`, in model coordinates.
fn ray_hit(rot_t: &nalgebra::Matrix3<f64>, x: f64, y: f64) -> Option<Point3> {
    // p = R^T (x, y, t); solve sum((p_i / r_i)^2) = 1 for the largest t.
    let o = rot_t * Vector3::new(x, y, 0.0);
    let d = rot_t * Vector3::new(0.0, 0.0, 1.0);
    let (mut a, mut b, mut c) = (0.0, 0.0, -1.0);
    for i in 0..3 {
        let r2 = HEAD_RADII[i] * HEAD_RADII[i];
        a += d[i] * d[i] / r2;
        b += 2.0 * o[i] * d[i] / r2;
        c += o[i] * o[i] / r2;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b + disc.sqrt()) / (2.0 * a);
    Some(o + d * t)
}

/// Render `size x size` pixels. `curves` are deformed model-space
/// polylines of the feature curves.
pub fn render(
    proj: &Projection,
    curves: &[(Curve, Vec<Point3>)],
    pupils: [Point3; 2],
    size: usize,
    rng: &mut ChaCha8Rng,
) -> GrayImage {
    let light = Vector3::new(0.35, -0.45, 0.82).normalize();
    let rot_t = proj.rotation.transpose();
    let background = rng.random_range(0.05..0.3);
    let tilt = rng.random_range(-0.15..0.15);
    let skin = rng.random_range(0.55..0.8);
    let mut img = vec![0.0f64; size * size];
    for py in 0..size {
        for px in 0..size {
            let cx = (px as f64 - proj.translation.x) / proj.scale;
            let cy = (py as f64 - proj.translation.y) / proj.scale;
            img[py * size + px] = match ray_hit(&rot_t, cx, cy) {
                Some(p) => {
                    let n = proj.rotation * surface_normal(&p);
                    skin * (0.3 + 0.7 * n.dot(&light).max(0.0))
                }
                None => background + tilt * (px as f64 / size as f64 - 0.5),
            };
        }
    }

    // Strokes, far curves first so nearer ones paint over them.
    let mut order: Vec<(f64, usize)> = curves
        .iter()
        .enumerate()
        .map(|(i, (_, pts))| {
            let depth = pts.iter().map(|p| proj.depth(p)).sum::<f64>() / pts.len() as f64;
            (depth, i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, i) in order {
        let (curve, pts) = &curves[i];
        let (ink, width) = style(*curve);
        let sigma = (width * proj.scale).max(0.45);
        for w in pts.windows(2) {
            let steps = ((proj.project(&w[1])[0] - proj.project(&w[0])[0])
                .hypot(proj.project(&w[1])[1] - proj.project(&w[0])[1])
                / (0.5 * sigma))
                .ceil()
                .max(1.0) as usize;
            for s in 0..steps {
                let p = w[0] + (w[1] - w[0]) * (s as f64 / steps as f64);
                stamp(&mut img, size, proj, &p, ink, sigma);
            }
        }
    }
    for pupil in pupils {
        stamp(&mut img, size, proj, &pupil, 0.9, (0.05 * proj.scale).max(0.6));
    }

    let noise = Normal::new(0.0, 0.02).expect("finite");
    let pixels = img
        .iter()
        .map(|v| ((v + noise.sample(rng)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    GrayImage {
        width: size,
        height: size,
        pixels,
    }
}

/// Darken a Gaussian footprint around `p`, weighted by how squarely its
/// surface faces the camera.
fn stamp(img: &mut [f64], size: usize, proj: &Projection, p: &Point3, ink: f64, sigma: f64) {
    let facing = (proj.rotation * surface_normal(p)).z;
    let vis = (facing / 0.25).clamp(0.0, 1.0);
    if vis == 0.0 {
        return;
    }
    let [u, v] = proj.project(p);
    let r = (3.0 * sigma).ceil() as isize;
    let (cu, cv) = (u.round() as isize, v.round() as isize);
    for y in (cv - r).max(0)..=(cv + r).min(size as isize - 1) {
        for x in (cu - r).max(0)..=(cu + r).min(size as isize - 1) {
            let d2 = (x as f64 - u).powi(2) + (y as f64 - v).powi(2);
            let a = ink * vis * (-d2 / (2.0 * sigma * sigma)).exp();
            let px = &mut img[y as usize * size + x as usize];
            *px *= 1.0 - 0.35 * a;
        }
    }
}

/// Dense polylines of the template curves, deformed by `deform`.
pub fn deformed_curves(samples: usize, deform: impl Fn(&Point3) -> Point3) -> Vec<(Curve, Vec<Point3>)> {
    FaceTemplate::render_curves(samples)
        .into_iter()
        .map(|(c, pts)| (c, pts.iter().map(&deform).collect()))
        .collect()
}
