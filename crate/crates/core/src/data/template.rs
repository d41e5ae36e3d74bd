//! Canonical 3d face geometry and the maps from it to every markup.
//!
//! Model space: unit-ish scale, origin at the head center, `x` to the
//! subject's left in the image (rightward), `y` downward, `z` toward the
//! camera. Feature curves lie on the front of an ellipsoid; the nose sticks
//! out of it.
//!
//! The finest 2d markup is sampled directly on the curves and forms the
//! superset. Every coarser 2d markup is a fixed linear combination of
//! superset points, so annotations of different markups agree exactly.
//! The 3d markup is sampled directly on the curves with its own layout.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::architecture::MarkupChain;
use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

/// Head ellipsoid semi-axes.
pub const HEAD_RADII: [f64; 3] = [0.9, 1.2, 0.95];

/// Markups with at most this many points use the named sparse layout.
pub const SPARSE_MAX: usize = 12;

/// Minimum count for the curve-group layout.
pub const GROUPED_MIN: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Curve {
    Jaw,
    BrowRight,
    BrowLeft,
    NoseBridge,
    NoseBase,
    EyeRight,
    EyeLeft,
    MouthOuter,
    MouthInner,
}

impl Curve {
    pub const ALL: [Curve; 9] = [
        Curve::Jaw,
        Curve::BrowRight,
        Curve::BrowLeft,
        Curve::NoseBridge,
        Curve::NoseBase,
        Curve::EyeRight,
        Curve::EyeLeft,
        Curve::MouthOuter,
        Curve::MouthInner,
    ];

    pub fn closed(self) -> bool {
        matches!(
            self,
            Curve::EyeRight | Curve::EyeLeft | Curve::MouthOuter | Curve::MouthInner
        )
    }

    /// Share of a 68-point layout each group receives.
    fn weight(self) -> f64 {
        match self {
            Curve::Jaw => 17.0,
            Curve::BrowRight | Curve::BrowLeft => 5.0,
            Curve::NoseBridge => 4.0,
            Curve::NoseBase => 5.0,
            Curve::EyeRight | Curve::EyeLeft => 6.0,
            Curve::MouthOuter => 12.0,
            Curve::MouthInner => 8.0,
        }
    }
}

/// Height of the ellipsoid surface at `(x, y)`, zero outside its outline.
pub fn surface_z(x: f64, y: f64) -> f64 {
    let [a, b, c] = HEAD_RADII;
    let q = 1.0 - (x / a).powi(2) - (y / b).powi(2);
    c * q.max(0.0).sqrt()
}

/// Outward unit normal of the head ellipsoid at a surface point.
pub fn surface_normal(p: &Point3) -> Point3 {
    let [a, b, c] = HEAD_RADII;
    Vector3::new(p.x / (a * a), p.y / (b * b), p.z / (c * c)).normalize()
}

fn on_surface(x: f64, y: f64, lift: f64) -> Point3 {
    Vector3::new(x, y, surface_z(x, y) + lift)
}

/// Point on `curve` at parameter `u`. Open curves run over `[0, 1]`;
/// closed curves are periodic with period 1 and start at their outer corner.
pub fn curve_point(curve: Curve, u: f64) -> Point3 {
    match curve {
        Curve::Jaw => {
            let a = (2.0 * u - 1.0) * 1.45;
            on_surface(0.8 * a.sin(), 0.2 + 0.8 * a.cos(), 0.0)
        }
        Curve::BrowRight | Curve::BrowLeft => {
            let sign = if curve == Curve::BrowRight { -1.0 } else { 1.0 };
            let x = 0.62 - 0.45 * u;
            on_surface(sign * x, -0.46 - 0.09 * (PI * u).sin(), 0.02)
        }
        Curve::NoseBridge => {
            let y = -0.22 + 0.42 * u;
            on_surface(0.0, y, 0.04 + 0.2 * u)
        }
        Curve::NoseBase => {
            let t = 2.0 * u - 1.0;
            let x = 0.16 * t;
            on_surface(x, 0.3 - 0.04 * (1.0 - t * t), 0.1 + 0.16 * (1.0 - t * t))
        }
        Curve::EyeRight | Curve::EyeLeft => {
            let sign = if curve == Curve::EyeRight { -1.0 } else { 1.0 };
            let th = 2.0 * PI * u;
            on_surface(sign * (0.35 + 0.14 * th.cos()), -0.24 + 0.055 * th.sin(), 0.01)
        }
        Curve::MouthOuter | Curve::MouthInner => {
            let (rx, ry) = if curve == Curve::MouthOuter { (0.3, 0.1) } else { (0.2, 0.035) };
            let th = 2.0 * PI * u;
            on_surface(-rx * th.cos(), 0.58 + ry * th.sin(), 0.02)
        }
    }
}

/// Parameters of `count` points spread over a curve.
fn params(curve: Curve, count: usize) -> Vec<f64> {
    if curve.closed() {
        (0..count).map(|j| j as f64 / count as f64).collect()
    } else if count == 1 {
        vec![0.5]
    } else {
        (0..count).map(|j| j as f64 / (count - 1) as f64).collect()
    }
}

/// Named points of the sparse layout, in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sparse {
    PupilRight,
    PupilLeft,
    NoseTip,
    MouthRight,
    MouthLeft,
    Chin,
    EyeOuterRight,
    EyeOuterLeft,
    EyeInnerRight,
    EyeInnerLeft,
    BrowMidRight,
    BrowMidLeft,
}

pub const SPARSE_ORDER: [Sparse; SPARSE_MAX] = [
    Sparse::PupilRight,
    Sparse::PupilLeft,
    Sparse::NoseTip,
    Sparse::MouthRight,
    Sparse::MouthLeft,
    Sparse::Chin,
    Sparse::EyeOuterRight,
    Sparse::EyeOuterLeft,
    Sparse::EyeInnerRight,
    Sparse::EyeInnerLeft,
    Sparse::BrowMidRight,
    Sparse::BrowMidLeft,
];

fn sparse_point(s: Sparse) -> Point3 {
    match s {
        Sparse::PupilRight => on_surface(-0.35, -0.24, 0.01),
        Sparse::PupilLeft => on_surface(0.35, -0.24, 0.01),
        Sparse::NoseTip => curve_point(Curve::NoseBase, 0.5),
        Sparse::MouthRight => curve_point(Curve::MouthOuter, 0.0),
        Sparse::MouthLeft => curve_point(Curve::MouthOuter, 0.5),
        Sparse::Chin => curve_point(Curve::Jaw, 0.5),
        Sparse::EyeOuterRight => curve_point(Curve::EyeRight, 0.0),
        Sparse::EyeOuterLeft => curve_point(Curve::EyeLeft, 0.0),
        Sparse::EyeInnerRight => curve_point(Curve::EyeRight, 0.5),
        Sparse::EyeInnerLeft => curve_point(Curve::EyeLeft, 0.5),
        Sparse::BrowMidRight => curve_point(Curve::BrowRight, 0.5),
        Sparse::BrowMidLeft => curve_point(Curve::BrowLeft, 0.5),
    }
}

/// Points per curve group for a markup of `count >= GROUPED_MIN` points.
pub fn allocate(count: usize) -> Result<Vec<(Curve, usize)>> {
    if count < GROUPED_MIN {
        return Err(Error::InvalidArgument(format!(
            "grouped layout needs at least {GROUPED_MIN} points, got {count}"
        )));
    }
    let mut n = [3usize, 1, 1, 1, 1, 2, 2, 2, 0];
    let total_weight: f64 = Curve::ALL.iter().map(|c| c.weight()).sum();
    let target: Vec<f64> = Curve::ALL
        .iter()
        .map(|c| c.weight() / total_weight * count as f64)
        .collect();
    // Increments keep brows and eyes symmetric and closed eye/mouth loops
    // even, so both corners are sample points.
    let units: [(&[usize], usize); 7] = [
        (&[0], 1),
        (&[1, 2], 1),
        (&[3], 1),
        (&[4], 1),
        (&[5, 6], 2),
        (&[7], 2),
        (&[8], 1),
    ];
    let mut left = count - n.iter().sum::<usize>();
    while left > 0 {
        let mut best: Option<(f64, usize)> = None;
        for (u, (groups, step)) in units.iter().enumerate() {
            let cost = groups.len() * step;
            if cost > left {
                continue;
            }
            let deficit: f64 = groups.iter().map(|&g| target[g] - n[g] as f64).sum::<f64>() / cost as f64;
            if best.is_none_or(|(d, _)| deficit > d) {
                best = Some((deficit, u));
            }
        }
        let (_, u) = best.expect("unit groups of cost 1 always fit");
        let (groups, step) = units[u];
        for &g in groups {
            n[g] += step;
        }
        left -= groups.len() * step;
    }
    Ok(Curve::ALL.iter().copied().zip(n).collect())
}

/// Sparse-layout point as a combination of grouped superset points.
fn sparse_from_groups(s: Sparse, offsets: &[(Curve, usize, usize)]) -> Vec<(usize, f64)> {
    let group = |c: Curve| *offsets.iter().find(|(g, _, _)| *g == c).expect("every curve allocated");
    let centroid = |c: Curve| {
        let (_, start, n) = group(c);
        (start..start + n).map(|i| (i, 1.0 / n as f64)).collect()
    };
    let at = |c: Curve, u: f64| {
        let (_, start, n) = group(c);
        interpolate(c, start, n, u)
    };
    match s {
        Sparse::PupilRight => centroid(Curve::EyeRight),
        Sparse::PupilLeft => centroid(Curve::EyeLeft),
        Sparse::NoseTip => at(Curve::NoseBase, 0.5),
        Sparse::MouthRight => at(Curve::MouthOuter, 0.0),
        Sparse::MouthLeft => at(Curve::MouthOuter, 0.5),
        Sparse::Chin => at(Curve::Jaw, 0.5),
        Sparse::EyeOuterRight => at(Curve::EyeRight, 0.0),
        Sparse::EyeOuterLeft => at(Curve::EyeLeft, 0.0),
        Sparse::EyeInnerRight => at(Curve::EyeRight, 0.5),
        Sparse::EyeInnerLeft => at(Curve::EyeLeft, 0.5),
        Sparse::BrowMidRight => at(Curve::BrowRight, 0.5),
        Sparse::BrowMidLeft => at(Curve::BrowLeft, 0.5),
    }
}

/// Linear interpolation in sample-index space of a group of `n` superset
/// points starting at `start`.
fn interpolate(curve: Curve, start: usize, n: usize, u: f64) -> Vec<(usize, f64)> {
    if n == 1 {
        return vec![(start, 1.0)];
    }
    let (pos, wrap) = if curve.closed() {
        ((u * n as f64).rem_euclid(n as f64), true)
    } else {
        (u * (n - 1) as f64, false)
    };
    let i0 = (pos.floor() as usize).min(n - 1);
    let frac = pos - i0 as f64;
    if frac < 1e-12 {
        return vec![(start + i0, 1.0)];
    }
    let i1 = if wrap { (i0 + 1) % n } else { (i0 + 1).min(n - 1) };
    vec![(start + i0, 1.0 - frac), (start + i1, frac)]
}

/// How the points of one markup are obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkupMap {
    pub name: String,
    /// Per landmark: weights over superset points.
    pub weights: Vec<Vec<(usize, f64)>>,
    /// Landmark indices used as the inter-ocular reference.
    pub interocular: Option<(usize, usize)>,
}

/// Geometry source of the superset and of the 3d markup.
#[derive(Clone, Debug, PartialEq)]
enum Layout {
    Sparse(usize),
    Grouped(Vec<(Curve, usize, usize)>),
}

impl Layout {
    fn new(count: usize) -> Result<Self> {
        if count <= SPARSE_MAX {
            return Ok(Layout::Sparse(count));
        }
        let mut start = 0;
        let mut out = Vec::new();
        for (c, n) in allocate(count)? {
            out.push((c, start, n));
            start += n;
        }
        Ok(Layout::Grouped(out))
    }

    fn points(&self) -> Vec<Point3> {
        match self {
            Layout::Sparse(n) => SPARSE_ORDER[..*n].iter().map(|s| sparse_point(*s)).collect(),
            Layout::Grouped(groups) => groups
                .iter()
                .flat_map(|(c, _, n)| params(*c, *n).into_iter().map(|u| curve_point(*c, u)))
                .collect(),
        }
    }

    fn interocular(&self) -> Option<(usize, usize)> {
        match self {
            Layout::Sparse(n) if *n >= 8 => Some((6, 7)),
            Layout::Sparse(n) if *n >= 2 => Some((0, 1)),
            Layout::Sparse(_) => None,
            Layout::Grouped(groups) => {
                let start = |c: Curve| groups.iter().find(|(g, _, _)| *g == c).map(|g| g.1);
                Some((start(Curve::EyeRight)?, start(Curve::EyeLeft)?))
            }
        }
    }
}

/// Template geometry plus the maps for one markup chain.
#[derive(Clone, Debug)]
pub struct FaceTemplate {
    chain: MarkupChain,
    superset: Layout,
    three_d: Layout,
    maps: Vec<MarkupMap>,
}

impl FaceTemplate {
    pub fn new(chain: &MarkupChain) -> Result<Self> {
        let finest = chain.two_d()[0].count;
        let superset = Layout::new(finest)?;
        let three_d = Layout::new(chain.three_d().count)?;
        let mut maps = Vec::new();
        for m in chain.two_d() {
            let weights = coarse_weights(&superset, m.count)?;
            let layout = Layout::new(m.count)?;
            maps.push(MarkupMap {
                name: m.name.clone(),
                weights,
                interocular: layout.interocular(),
            });
        }
        let n3 = chain.three_d().count;
        maps.push(MarkupMap {
            name: chain.three_d().name.clone(),
            weights: (0..n3).map(|i| vec![(i, 1.0)]).collect(),
            interocular: three_d.interocular(),
        });
        Ok(FaceTemplate {
            chain: chain.clone(),
            superset,
            three_d,
            maps,
        })
    }

    pub fn chain(&self) -> &MarkupChain {
        &self.chain
    }

    /// Canonical superset points (undeformed).
    pub fn superset_points(&self) -> Vec<Point3> {
        self.superset.points()
    }

    /// Canonical 3d-markup points (undeformed).
    pub fn points_3d(&self) -> Vec<Point3> {
        self.three_d.points()
    }

    /// Maps in chain order: 2d markups then the 3d markup.
    pub fn maps(&self) -> &[MarkupMap] {
        &self.maps
    }

    pub fn map(&self, name: &str) -> Option<&MarkupMap> {
        self.maps.iter().find(|m| m.name == name)
    }

    /// Apply a 2d markup map to superset points (any dimensionality).
    pub fn reduce<const D: usize>(map: &MarkupMap, superset: &[[f64; D]]) -> Vec<[f64; D]> {
        map.weights
            .iter()
            .map(|w| {
                let mut out = [0.0; D];
                for &(i, c) in w {
                    for (o, v) in out.iter_mut().zip(superset[i]) {
                        *o += c * v;
                    }
                }
                out
            })
            .collect()
    }

    /// Dense polylines of every feature curve for rendering.
    pub fn render_curves(samples: usize) -> Vec<(Curve, Vec<Point3>)> {
        Curve::ALL
            .iter()
            .map(|&c| {
                let n = if c.closed() { samples } else { samples.max(2) };
                let us: Vec<f64> = if c.closed() {
                    (0..=n).map(|j| j as f64 / n as f64).collect()
                } else {
                    (0..n).map(|j| j as f64 / (n - 1) as f64).collect()
                };
                (c, us.into_iter().map(|u| curve_point(c, u)).collect())
            })
            .collect()
    }
}

fn coarse_weights(superset: &Layout, count: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    match superset {
        Layout::Sparse(n) => {
            debug_assert!(count <= *n);
            Ok((0..count).map(|i| vec![(i, 1.0)]).collect())
        }
        Layout::Grouped(groups) => {
            if count <= SPARSE_MAX {
                return Ok(SPARSE_ORDER[..count]
                    .iter()
                    .map(|s| sparse_from_groups(*s, groups))
                    .collect());
            }
            let mut out = Vec::with_capacity(count);
            for ((c, start, n), (_, m)) in groups.iter().zip(allocate(count)?) {
                for u in params(*c, m) {
                    out.push(interpolate(*c, *start, *n, u));
                }
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(counts: &[usize], three: usize) -> MarkupChain {
        MarkupChain::from_counts(counts, three).unwrap()
    }

    #[test]
    fn allocation_sums_and_keeps_symmetry() {
        for count in [13, 24, 29, 68, 98] {
            let a = allocate(count).unwrap();
            assert_eq!(a.iter().map(|x| x.1).sum::<usize>(), count);
            let n: Vec<usize> = a.iter().map(|x| x.1).collect();
            assert_eq!(n[1], n[2]);
            assert_eq!(n[5], n[6]);
            assert_eq!(n[5] % 2, 0);
            assert_eq!(n[7] % 2, 0);
        }
    }

    #[test]
    fn markup_maps_have_declared_sizes() {
        for (counts, three) in [(vec![98, 68, 5], 68), (vec![24, 12, 5], 8), (vec![12, 8, 3], 6)] {
            let t = FaceTemplate::new(&chain(&counts, three)).unwrap();
            for (m, expect) in t.maps().iter().zip(counts.iter().chain([three].iter())) {
                assert_eq!(m.weights.len(), *expect, "{}", m.name);
            }
            assert_eq!(t.points_3d().len(), three);
            assert_eq!(t.superset_points().len(), counts[0]);
        }
    }

    #[test]
    fn coarse_markups_hit_named_points_on_the_template() {
        let t = FaceTemplate::new(&chain(&[98, 68, 5], 68)).unwrap();
        let sup: Vec<[f64; 3]> = t.superset_points().iter().map(|p| [p.x, p.y, p.z]).collect();
        let five = FaceTemplate::reduce(t.map("5").unwrap(), &sup);
        for (got, s) in five.iter().zip(&SPARSE_ORDER[..5]) {
            let want = sparse_point(*s);
            assert!((got[0] - want.x).abs() < 1e-12, "{s:?}");
            assert!((got[1] - want.y).abs() < 1e-12, "{s:?}");
        }
    }

    #[test]
    fn interocular_pairs_are_eye_points() {
        let t = FaceTemplate::new(&chain(&[24, 12, 5], 8)).unwrap();
        let sup: Vec<[f64; 3]> = t.superset_points().iter().map(|p| [p.x, p.y, p.z]).collect();
        for m in t.maps().iter().take(3) {
            let pts = FaceTemplate::reduce(m, &sup);
            let (a, b) = m.interocular.unwrap();
            assert!(pts[a][0] < -0.2 && pts[b][0] > 0.2, "{}", m.name);
            assert!((pts[a][1] + 0.24).abs() < 0.01);
        }
    }

    #[test]
    fn too_small_grouped_layout_is_rejected() {
        assert!(allocate(12).is_err());
    }
}
