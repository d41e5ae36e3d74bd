use std::fmt;

use super::scalar::Scalar;
use crate::error::{shape_err, Result};

/// Dense row-major tensor. Image tensors are laid out `N x C x Y x X`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            );
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    /// Element-wise precision conversion.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return shape_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            );
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

impl<T> Tensor<T> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Product of extents after the first two (the spatial size of an
    /// `N x C x ...` tensor).
    pub fn spatial(&self) -> usize {
        self.shape.iter().skip(2).product()
    }
}

impl<T: Copy> Tensor<T> {
    pub fn item(&self) -> T {
        self.data[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_count_must_match_extents() {
        assert!(Tensor::new(&[2, 3], vec![0.0f64; 6]).is_ok());
        assert!(Tensor::new(&[2, 3], vec![0.0f64; 5]).is_err());
        let t = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        assert_eq!(t.spatial(), 16);
        assert!(t.clone().reshaped(&[2, 16]).is_ok());
        assert!(t.reshaped(&[3, 16]).is_err());
    }
}
