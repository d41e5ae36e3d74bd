use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type of the engine. `f32` is used for training,
/// `f64` for finite-difference gradient checks.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn of(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// # Safety
    /// The strides must describe in-bounds views of the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix view over a slice: `rows x cols`, optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> Mat<'a, T> {
    /// Stored row-major as `rows x cols`.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Mat {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    /// Logical transpose of a row-major `rows x cols` buffer.
    pub fn t(self) -> Self {
        Mat {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize, isize, isize) {
        let c = self.cols as isize;
        if self.transposed {
            (self.cols, self.rows, 1, c)
        } else {
            (self.rows, self.cols, c, 1)
        }
    }
}

/// `out (m x n, row-major) = a * b + beta * out`.
pub(crate) fn gemm<T: Scalar>(a: Mat<'_, T>, b: Mat<'_, T>, beta: T, out: &mut [T]) {
    let (m, k, rsa, csa) = a.logical();
    let (k2, n, rsb, csb) = b.logical();
    assert_eq!(k, k2, "gemm inner dimension");
    assert!(a.data.len() >= a.rows * a.cols);
    assert!(b.data.len() >= b.rows * b.cols);
    assert!(out.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index the strided views touch.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5 - 1.0).collect(); // 3x4
        let mut out = vec![0.0; 8];
        gemm(Mat::new(&a, 2, 3), Mat::new(&b, 3, 4), 0.0, &mut out);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert_eq!(out[i * 4 + j], want);
            }
        }
        // a^T (3x2) * a (2x3)
        let mut ata = vec![0.0; 9];
        gemm(Mat::new(&a, 2, 3).t(), Mat::new(&a, 2, 3), 0.0, &mut ata);
        for i in 0..3 {
            for j in 0..3 {
                let want: f64 = (0..2).map(|p| a[p * 3 + i] * a[p * 3 + j]).sum();
                assert_eq!(ata[i * 3 + j], want);
            }
        }
    }
}
