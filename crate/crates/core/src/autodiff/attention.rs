//! Landmark attention operators on `N x L x Y x X` maps.
//!
//! Coordinates are zero-indexed pixel centers, `x` to the right and `y`
//! downward.

use super::graph::{ChannelStat, GradAcc, Graph, Op, Var};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Channels whose max-min spread is below this contribute nothing to the
/// fused mask.
pub const DEGENERATE_RANGE: f64 = 1e-12;

/// Tolerance on the per-channel mass accepted by [`Graph::soft_argmax`].
pub const ATTENTION_MASS_TOLERANCE: f64 = 1e-5;

impl<T: Scalar> Graph<T> {
    /// Softmax over the spatial positions of each channel.
    pub fn spatial_softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return shape_err("spatial_softmax", format!("expected N x L x Y x X, got {xs:?}"));
        }
        let s = xs[2] * xs[3];
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for (src, dst) in xv.chunks(s).zip(out.chunks_mut(s)) {
            let max = src.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = 0.0f64;
            for (d, v) in dst.iter_mut().zip(src) {
                *d = (*v - max).exp();
                total += d.to_f64_lossy();
            }
            let inv = T::of(1.0 / total);
            for d in dst.iter_mut() {
                *d *= inv;
            }
        }
        Ok(self.push(Tensor::from_parts(xs, out), Op::SpatialSoftmax { x }))
    }

    /// First-order moments of each attention channel: `N x L x 2` holding
    /// `(x, y)` per landmark.
    pub fn soft_argmax(&mut self, attention: Var) -> Result<Var> {
        let xs = self.shape(attention).to_vec();
        if xs.len() != 4 {
            return shape_err("soft_argmax", format!("expected N x L x Y x X, got {xs:?}"));
        }
        let (n, l, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let av = self.value(attention).data();
        let mut out = vec![T::zero(); n * l * 2];
        for (ch, src) in av.chunks(h * w).enumerate() {
            let mut mass = 0.0f64;
            let mut neg = false;
            let (mut sx, mut sy) = (T::zero(), T::zero());
            for y in 0..h {
                let row = &src[y * w..(y + 1) * w];
                let mut row_sum = T::zero();
                for (xi, v) in row.iter().enumerate() {
                    neg |= *v < T::zero();
                    mass += v.to_f64_lossy();
                    sx += T::of(xi as f64) * *v;
                    row_sum += *v;
                }
                sy += T::of(y as f64) * row_sum;
            }
            if neg || (mass - 1.0).abs() > ATTENTION_MASS_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "soft_argmax: channel {} of sample {} is not a distribution (mass {mass})",
                    ch % l,
                    ch / l
                )));
            }
            // Rounding can carry the expectation an ulp past the last pixel.
            out[2 * ch] = clamp_coord(sx, w);
            out[2 * ch + 1] = clamp_coord(sy, h);
        }
        Ok(self.push(
            Tensor::from_parts(vec![n, l, 2], out),
            Op::SoftArgmax { x: attention },
        ))
    }

    /// Pixelwise max over min-max rescaled attention channels of every part.
    /// Output is `N x 1 x Y x X` in `[0, 1]`.
    pub fn fused_mask(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("fused_mask needs at least one map".into()))?;
        let fs = self.shape(first).to_vec();
        if fs.len() != 4 {
            return shape_err("fused_mask", format!("expected N x L x Y x X, got {fs:?}"));
        }
        let (n, h, w) = (fs[0], fs[2], fs[3]);
        let s = h * w;
        for p in parts {
            let ps = self.shape(*p);
            if ps.len() != 4 || ps[0] != n || ps[2] != h || ps[3] != w {
                return shape_err("fused_mask", format!("{ps:?} vs {fs:?}"));
            }
        }
        let degenerate = T::of(DEGENERATE_RANGE);
        let mut stats = Vec::with_capacity(parts.len());
        for p in parts {
            let v = self.value(*p).data();
            let st: Vec<ChannelStat<T>> = v
                .chunks(s)
                .map(|ch| {
                    let (mut argmin, mut argmax) = (0, 0);
                    for (i, e) in ch.iter().enumerate() {
                        if *e < ch[argmin] {
                            argmin = i;
                        }
                        if *e > ch[argmax] {
                            argmax = i;
                        }
                    }
                    ChannelStat {
                        argmin,
                        argmax,
                        min: ch[argmin],
                        range: ch[argmax] - ch[argmin],
                    }
                })
                .collect();
            stats.push(st);
        }
        let mut out = vec![T::zero(); n * s];
        let mut winners = vec![None; n * s];
        for i in 0..n {
            for (pi, p) in parts.iter().enumerate() {
                let l = self.shape(*p)[1];
                let v = self.value(*p).data();
                for ch in 0..l {
                    let st = stats[pi][i * l + ch];
                    if st.range < degenerate {
                        continue;
                    }
                    let src = &v[(i * l + ch) * s..(i * l + ch + 1) * s];
                    for (px, e) in src.iter().enumerate() {
                        let r = (*e - st.min) / st.range;
                        let slot = i * s + px;
                        if winners[slot].is_none() || r > out[slot] {
                            out[slot] = r;
                            winners[slot] = Some((pi as u32, ch as u32));
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![n, 1, h, w], out),
            Op::FusedMask {
                parts: parts.to_vec(),
                winners,
                stats,
            },
        ))
    }
}

pub(crate) fn softmax_backward<T: Scalar>(
    _graph: &Graph<T>,
    x: Var,
    y: &Tensor<T>,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let s = y.shape()[2] * y.shape()[3];
    if let Some(dx) = acc.slot(x) {
        for ((d, yc), gc) in dx.chunks_mut(s).zip(y.data().chunks(s)).zip(g.chunks(s)) {
            let dot: T = yc.iter().zip(gc).map(|(a, b)| *a * *b).sum();
            for ((di, yi), gi) in d.iter_mut().zip(yc).zip(gc) {
                *di += *yi * (*gi - dot);
            }
        }
    }
}

fn clamp_coord<T: Scalar>(v: T, size: usize) -> T {
    let hi = T::of((size - 1) as f64);
    if v < T::zero() {
        T::zero()
    } else if v > hi {
        hi
    } else {
        v
    }
}

pub(crate) fn soft_argmax_backward<T: Scalar>(
    graph: &Graph<T>,
    x: Var,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let xs = graph.shape(x).to_vec();
    let (h, w) = (xs[2], xs[3]);
    if let Some(dx) = acc.slot(x) {
        for (ch, d) in dx.chunks_mut(h * w).enumerate() {
            let (gx, gy) = (g[2 * ch], g[2 * ch + 1]);
            for y in 0..h {
                let fy = gy * T::of(y as f64);
                for xi in 0..w {
                    d[y * w + xi] += gx * T::of(xi as f64) + fy;
                }
            }
        }
    }
}

pub(crate) fn fused_mask_backward<T: Scalar>(
    graph: &Graph<T>,
    parts: &[Var],
    winners: &[Option<(u32, u32)>],
    stats: &[Vec<ChannelStat<T>>],
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let fs = graph.shape(parts[0]);
    let (n, s) = (fs[0], fs[2] * fs[3]);
    for (pi, p) in parts.iter().enumerate() {
        let l = graph.shape(*p)[1];
        let v = graph.value(*p).data();
        let Some(dp) = acc.slot(*p) else { continue };
        for i in 0..n {
            for px in 0..s {
                let slot = i * s + px;
                let Some((wp, wc)) = winners[slot] else { continue };
                if wp as usize != pi {
                    continue;
                }
                let ch = wc as usize;
                let st = stats[pi][i * l + ch];
                let base = (i * l + ch) * s;
                let phi = v[base + px];
                let max = v[base + st.argmax];
                let r2 = st.range * st.range;
                let gi = g[slot];
                dp[base + px] += gi / st.range;
                dp[base + st.argmin] += gi * (phi - max) / r2;
                dp[base + st.argmax] -= gi * (phi - st.min) / r2;
            }
        }
    }
}
