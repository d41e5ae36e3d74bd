use super::graph::{GradAcc, Graph, Op, Var};
use super::param::Buffer;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running moments are updated.
    Train,
    /// Frozen running moments.
    Infer,
}

/// Running moments buffer for `channels` channels: row 0 mean, row 1 variance.
pub fn running_moments<T: Scalar>(channels: usize) -> Tensor<T> {
    Tensor::from_fn(&[2, channels], |i| if i < channels { T::zero() } else { T::one() })
}

impl<T: Scalar> Graph<T> {
    /// Per-channel batch normalization of an `N x C x ...` tensor.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        moments: &mut Buffer<T>,
        mode: BnMode,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return shape_err("batch_norm", format!("input {xs:?}"));
        }
        let (n, c) = (xs[0], xs[1]);
        let s: usize = xs[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || moments.tensor.shape() != [2, c] {
            return shape_err(
                "batch_norm",
                format!(
                    "{c} channels vs gamma {:?}, beta {:?}, moments {:?}",
                    self.shape(gamma),
                    self.shape(beta),
                    moments.tensor.shape()
                ),
            );
        }
        if mode == BnMode::Infer && !moments.initialized {
            return Err(Error::UninitializedMoments(moments.name.clone()));
        }
        let eps = T::of(BN_EPSILON);
        let m = n * s;
        let xv = self.value(x).data();
        let (mean, var): (Vec<T>, Vec<T>) = match mode {
            BnMode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut acc = 0.0f64;
                    for i in 0..n {
                        let b = (i * c + ch) * s;
                        acc += xv[b..b + s].iter().map(|v| v.to_f64_lossy()).sum::<f64>();
                    }
                    let mu = acc / m as f64;
                    let mut sq = 0.0f64;
                    for i in 0..n {
                        let b = (i * c + ch) * s;
                        sq += xv[b..b + s]
                            .iter()
                            .map(|v| {
                                let d = v.to_f64_lossy() - mu;
                                d * d
                            })
                            .sum::<f64>();
                    }
                    mean[ch] = T::of(mu);
                    var[ch] = T::of(sq / m as f64);
                }
                let rm = moments.tensor.data_mut();
                let mom = T::of(BN_MOMENTUM);
                let unbias = if m > 1 { T::of(m as f64 / (m - 1) as f64) } else { T::one() };
                for ch in 0..c {
                    rm[ch] = mom * rm[ch] + (T::one() - mom) * mean[ch];
                    rm[c + ch] = mom * rm[c + ch] + (T::one() - mom) * var[ch] * unbias;
                }
                moments.initialized = true;
                (mean, var)
            }
            BnMode::Infer => {
                let rm = moments.tensor.data();
                (rm[..c].to_vec(), rm[c..].to_vec())
            }
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let b = (i * c + ch) * s;
                for p in b..b + s {
                    let h = (xv[p] - mean[ch]) * inv_std[ch];
                    xhat[p] = h;
                    out[p] = gv[ch] * h + bv[ch];
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(xs, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == BnMode::Train,
            },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_backward<T: Scalar>(
    graph: &Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    train: bool,
    g: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    let xs = graph.shape(x);
    let (n, c) = (xs[0], xs[1]);
    let s: usize = xs[2..].iter().product();
    let m = T::of((n * s) as f64);
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let b = (i * c + ch) * s;
            for p in b..b + s {
                sum_dy[ch] += g[p];
                sum_dy_xhat[ch] += g[p] * xhat[p];
            }
        }
    }
    if let Some(dg) = acc.slot(gamma) {
        for ch in 0..c {
            dg[ch] += sum_dy_xhat[ch];
        }
    }
    if let Some(db) = acc.slot(beta) {
        for ch in 0..c {
            db[ch] += sum_dy[ch];
        }
    }
    let gv = graph.value(gamma).data().to_vec();
    if let Some(dx) = acc.slot(x) {
        for i in 0..n {
            for ch in 0..c {
                let b = (i * c + ch) * s;
                let k = gv[ch] * inv_std[ch];
                if train {
                    let k = k / m;
                    for p in b..b + s {
                        dx[p] += k * (m * g[p] - sum_dy[ch] - xhat[p] * sum_dy_xhat[ch]);
                    }
                } else {
                    for p in b..b + s {
                        dx[p] += k * g[p];
                    }
                }
            }
        }
    }
}
