//! Convolutions and resampling over `N x C x Y x X` tensors.
//!
//! `conv2d` lowers each sample to an im2col matrix and runs one GEMM; the
//! backward pass rebuilds the column matrix rather than keeping it alive.

use super::graph::{add_into, GradAcc, Graph, Op, Var};
use super::scalar::{gemm, Mat, Scalar};
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn rows(&self) -> usize {
        self.ci * self.k * self.k
    }
}

/// Output columns `lo..hi` whose input column `ox * stride + kx - pad` is
/// inside the image.
fn valid_range(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = if kx >= g.pad { 0 } else { (g.pad - kx).div_ceil(g.stride) };
    let hi = if g.w + g.pad <= kx { 0 } else { ((g.w - 1 + g.pad - kx) / g.stride + 1).min(g.ow) };
    (lo.min(hi), hi)
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let p = g.cols();
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                let (lo, hi) = valid_range(g, kx);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    let start = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (j, d) in line[lo..hi].iter_mut().enumerate() {
                            *d = src[start + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.cols();
    for c in 0..g.ci {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                let (lo, hi) = valid_range(g, kx);
                if lo == hi {
                    continue;
                }
                let start = lo * g.stride + kx - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if g.stride == 1 {
                        for (d, v) in line[start..start + hi - lo].iter_mut().zip(s) {
                            *d += *v;
                        }
                    } else {
                        for (j, v) in s.iter().enumerate() {
                            line[start + j * g.stride] += *v;
                        }
                    }
                }
            }
        }
    }
}

fn geometry(xs: &[usize], ws: &[usize], bs: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    if xs.len() != 4 || ws.len() != 4 {
        return shape_err("conv2d", format!("input {xs:?}, kernel {ws:?} must be rank 4"));
    }
    let (ci, h, w) = (xs[1], xs[2], xs[3]);
    let (co, kci, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if kh != kw || kh % 2 == 0 {
        return shape_err("conv2d", format!("kernel {kh}x{kw} must be square with odd size"));
    }
    if kci != ci {
        return shape_err(
            "conv2d",
            format!("input has {ci} channels, kernel expects {kci}"),
        );
    }
    if bs != [co] {
        return shape_err("conv2d", format!("bias {bs:?} for {co} output channels"));
    }
    if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
        return shape_err("conv2d", format!("stride {stride}, pad {pad} on {h}x{w}"));
    }
    Ok(ConvGeom {
        ci,
        h,
        w,
        k: kh,
        stride,
        pad,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (w + 2 * pad - kw) / stride + 1,
    })
}

impl<T: Scalar> Graph<T> {
    /// 2-D convolution. `kernel` is `Co x Ci x k x k` with odd `k`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let g = geometry(self.shape(x), self.shape(kernel), self.shape(bias), stride, pad)?;
        let n = self.shape(x)[0];
        let co = self.shape(kernel)[0];
        let (p, k) = (g.cols(), g.rows());
        let xv = self.value(x).data();
        let wv = self.value(kernel).data();
        let bv = self.value(bias).data();
        let mut out = vec![T::zero(); n * co * p];
        let mut col = vec![T::zero(); k * p];
        let in_block = g.ci * g.h * g.w;
        for i in 0..n {
            im2col(&xv[i * in_block..(i + 1) * in_block], &g, &mut col);
            let o = &mut out[i * co * p..(i + 1) * co * p];
            for (c, row) in o.chunks_mut(p).enumerate() {
                row.fill(bv[c]);
            }
            gemm(Mat::new(wv, co, k), Mat::new(&col, k, p), T::one(), o);
        }
        let value = Tensor::from_parts(vec![n, co, g.oh, g.ow], out);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w: kernel,
                b: bias,
                stride,
                pad,
            },
        ))
    }

    /// Per-pixel linear map over channels. `kernel` is `Co x Ci x 1 x 1`.
    pub fn conv1x1(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(kernel), self.shape(bias));
        if xs.len() != 4 || ws.len() != 4 || ws[2] != 1 || ws[3] != 1 {
            return shape_err("conv1x1", format!("input {xs:?}, kernel {ws:?}"));
        }
        if ws[1] != xs[1] {
            return shape_err(
                "conv1x1",
                format!("input has {} channels, kernel expects {}", xs[1], ws[1]),
            );
        }
        if bs != [ws[0]] {
            return shape_err("conv1x1", format!("bias {bs:?} for {} outputs", ws[0]));
        }
        let (n, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let co = ws[0];
        let p = h * w;
        let xv = self.value(x).data();
        let wv = self.value(kernel).data();
        let bv = self.value(bias).data();
        let mut out = vec![T::zero(); n * co * p];
        for i in 0..n {
            let o = &mut out[i * co * p..(i + 1) * co * p];
            for (c, row) in o.chunks_mut(p).enumerate() {
                row.fill(bv[c]);
            }
            gemm(
                Mat::new(wv, co, ci),
                Mat::new(&xv[i * ci * p..(i + 1) * ci * p], ci, p),
                T::one(),
                o,
            );
        }
        Ok(self.push(
            Tensor::from_parts(vec![n, co, h, w], out),
            Op::Conv1x1 {
                x,
                w: kernel,
                b: bias,
            },
        ))
    }

    /// Per-channel `k x k` convolution, stride 1, "same" padding.
    /// `kernel` is `C x 1 x k x k`.
    pub fn depthwise_conv(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != 1 || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return shape_err("depthwise_conv", format!("input {xs:?}, kernel {ws:?}"));
        }
        if ws[0] != xs[1] {
            return shape_err(
                "depthwise_conv",
                format!("{} filters for {} channels", ws[0], xs[1]),
            );
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let k = ws[2];
        let r = (k / 2) as isize;
        let xv = self.value(x).data();
        let wv = self.value(kernel).data();
        let mut out = vec![T::zero(); xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * h * w;
                let plane = &xv[base..base + h * w];
                let filt = &wv[ch * k * k..(ch + 1) * k * k];
                let o = &mut out[base..base + h * w];
                for ky in 0..k {
                    let dy = ky as isize - r;
                    for kx in 0..k {
                        let dx = kx as isize - r;
                        let wk = filt[ky * k + kx];
                        for y in 0..h {
                            let iy = y as isize + dy;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                            let dst = &mut o[y * w..(y + 1) * w];
                            let (x0, x1) = span(w, dx);
                            for xx in x0..x1 {
                                dst[xx] += wk * src[(xx as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(Tensor::from_parts(xs, out), Op::Depthwise { x, w: kernel }))
    }

    /// Depthwise `3 x 3` convolution followed by a pointwise `1 x 1` mix.
    pub fn depthwise_separable_conv(
        &mut self,
        x: Var,
        depth_kernel: Var,
        point_kernel: Var,
        bias: Var,
    ) -> Result<Var> {
        let d = self.depthwise_conv(x, depth_kernel)?;
        self.conv1x1(d, point_kernel, bias)
    }

    /// Bilinear 2x upsampling, align-corners-false sampling.
    pub fn bilinear_upsample2x(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return shape_err("bilinear_upsample2x", format!("input {xs:?}"));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (ty, tx) = (axis_table(h), axis_table(w));
        let xv = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * oh * ow];
        for (plane, o) in xv.chunks(h * w).zip(out.chunks_mut(oh * ow)) {
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let (ly, my) = (T::of(ly), T::of(1.0 - ly));
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let (lx, mx) = (T::of(lx), T::of(1.0 - lx));
                    o[oy * ow + ox] = my * (mx * plane[y0 * w + x0] + lx * plane[y0 * w + x1])
                        + ly * (mx * plane[y1 * w + x0] + lx * plane[y1 * w + x1]);
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![n, c, oh, ow], out),
            Op::Upsample2x { x },
        ))
    }
}

/// Range of output columns whose shifted input column stays in bounds.
#[inline]
fn span(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx.max(0)).max(0) as usize;
    (lo.min(w), hi.min(w))
}

/// For each of the `2n` output positions: (lower source, upper source, upper weight).
fn axis_table(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    graph: &Graph<T>,
    x: Var,
    w: Var,
    b: Var,
    stride: usize,
    pad: usize,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let geom = geometry(graph.shape(x), graph.shape(w), graph.shape(b), stride, pad)
        .expect("validated in forward");
    let n = graph.shape(x)[0];
    let co = graph.shape(w)[0];
    let (p, k) = (geom.cols(), geom.rows());
    let xv = graph.value(x).data();
    let wv = graph.value(w).data();
    let in_block = geom.ci * geom.h * geom.w;
    let need_x = graph.requires_grad(x);
    let need_w = graph.requires_grad(w);

    if let Some(db) = acc.slot(b) {
        for (i, row) in g.chunks(p).enumerate() {
            db[i % co] += row.iter().copied().sum();
        }
    }
    let mut col = vec![T::zero(); k * p];
    if need_w {
        let mut dw = vec![T::zero(); co * k];
        for i in 0..n {
            im2col(&xv[i * in_block..(i + 1) * in_block], &geom, &mut col);
            gemm(
                Mat::new(&g[i * co * p..(i + 1) * co * p], co, p),
                Mat::new(&col, k, p).t(),
                T::one(),
                &mut dw,
            );
        }
        add_into(acc.slot(w).expect("requires grad"), &dw);
    }
    if need_x {
        let dx = acc.slot(x).expect("requires grad");
        for i in 0..n {
            gemm(
                Mat::new(wv, co, k).t(),
                Mat::new(&g[i * co * p..(i + 1) * co * p], co, p),
                T::zero(),
                &mut col,
            );
            col2im(&col, &geom, &mut dx[i * in_block..(i + 1) * in_block]);
        }
    }
}

pub(crate) fn conv1x1_backward<T: Scalar>(
    graph: &Graph<T>,
    x: Var,
    w: Var,
    b: Var,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let xs = graph.shape(x);
    let (n, ci, p) = (xs[0], xs[1], xs[2] * xs[3]);
    let co = graph.shape(w)[0];
    let xv = graph.value(x).data();
    let wv = graph.value(w).data();
    if let Some(db) = acc.slot(b) {
        for (i, row) in g.chunks(p).enumerate() {
            db[i % co] += row.iter().copied().sum();
        }
    }
    if let Some(dw) = acc.slot(w) {
        for i in 0..n {
            gemm(
                Mat::new(&g[i * co * p..(i + 1) * co * p], co, p),
                Mat::new(&xv[i * ci * p..(i + 1) * ci * p], ci, p).t(),
                T::one(),
                dw,
            );
        }
    }
    if let Some(dx) = acc.slot(x) {
        for i in 0..n {
            gemm(
                Mat::new(wv, co, ci).t(),
                Mat::new(&g[i * co * p..(i + 1) * co * p], co, p),
                T::one(),
                &mut dx[i * ci * p..(i + 1) * ci * p],
            );
        }
    }
}

pub(crate) fn depthwise_backward<T: Scalar>(
    graph: &Graph<T>,
    x: Var,
    w: Var,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let xs = graph.shape(x).to_vec();
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let k = graph.shape(w)[2];
    let r = (k / 2) as isize;
    let xv = graph.value(x).data();
    let wv = graph.value(w).data();
    if let Some(dw) = acc.slot(w) {
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * h * wd;
                let plane = &xv[base..base + h * wd];
                let go = &g[base..base + h * wd];
                for ky in 0..k {
                    let dy = ky as isize - r;
                    for kx in 0..k {
                        let dx = kx as isize - r;
                        let mut t = T::zero();
                        for y in 0..h {
                            let iy = y as isize + dy;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let (x0, x1) = span(wd, dx);
                            for xx in x0..x1 {
                                t += go[y * wd + xx] * plane[iy as usize * wd + (xx as isize + dx) as usize];
                            }
                        }
                        dw[ch * k * k + ky * k + kx] += t;
                    }
                }
            }
        }
    }
    if let Some(dxv) = acc.slot(x) {
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * h * wd;
                let go = &g[base..base + h * wd];
                let filt = &wv[ch * k * k..(ch + 1) * k * k];
                let d = &mut dxv[base..base + h * wd];
                for ky in 0..k {
                    let dy = ky as isize - r;
                    for kx in 0..k {
                        let dx = kx as isize - r;
                        let wk = filt[ky * k + kx];
                        for y in 0..h {
                            let iy = y as isize + dy;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let (x0, x1) = span(wd, dx);
                            for xx in x0..x1 {
                                d[iy as usize * wd + (xx as isize + dx) as usize] += wk * go[y * wd + xx];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn upsample_backward<T: Scalar>(
    graph: &Graph<T>,
    x: Var,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let xs = graph.shape(x).to_vec();
    let (h, w) = (xs[2], xs[3]);
    let (ty, tx) = (axis_table(h), axis_table(w));
    let ow = 2 * w;
    if let Some(dx) = acc.slot(x) {
        for (d, go) in dx.chunks_mut(h * w).zip(g.chunks(4 * h * w)) {
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let (ly, my) = (T::of(ly), T::of(1.0 - ly));
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let (lx, mx) = (T::of(lx), T::of(1.0 - lx));
                    let v = go[oy * ow + ox];
                    d[y0 * w + x0] += my * mx * v;
                    d[y0 * w + x1] += my * lx * v;
                    d[y1 * w + x0] += ly * mx * v;
                    d[y1 * w + x1] += ly * lx * v;
                }
            }
        }
    }
}
