//! Minimal reverse-mode differentiable tensor engine.
//!
//! Exactly the operation set the magnification networks need: `conv2d`,
//! `relu`, `resize`, channel concat, elementwise arithmetic, an L1 loss and
//! a handful of scalar helpers for the removal switches. Tensors are
//! immutable values; gradients are produced by recording ops on a [`Tape`]
//! and running one backward pass over it.
//!
//! Compute is 32-bit by default. Every op is generic over [`Scalar`], and the
//! gradient checks instantiate the same code at 64-bit.

mod adam;
mod exec;
mod gemm;
pub mod ops;
mod tape;

pub use adam::AdamState;
pub use exec::{EvalExec, Exec};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};
use std::sync::Arc;

/// Element type of the engine: `f32` for the fast path, `f64` for the
/// gradient-check shadow mode.
pub trait Scalar:
    num_traits::Float + std::fmt::Debug + std::iter::Sum + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}

/// (batch, channel, height, width) of a dense row-major tensor.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Flat offset of (n, c, h, w).
    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Dense 4-D array. Cloning is O(1); the buffer is shared and never mutated
/// after construction.
#[derive(Clone, Debug)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::dim(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: Arc::new(vec![T::zero(); shape.numel()]),
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: Arc::new(vec![value; shape.numel()]),
        }
    }

    /// A 1-element tensor, used for scalar losses and switch parameters.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Shape::new(1, 1, 1, 1),
            data: Arc::new(vec![value]),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// The value of a 1-element tensor.
    pub fn item(&self) -> T {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    #[inline(always)]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.at(n, c, y, x)]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert the element type (used to move between 32- and 64-bit modes).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: Arc::new(self.data.iter().map(|v| U::from_f64(v.as_f64())).collect()),
        }
    }

    /// Largest absolute element (0 for empty tensors).
    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }
}

impl Tensor<f32> {
    /// Raw little-endian bytes of the buffer (checkpoint / dataset formats).
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.numel() * 4);
        for v in self.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(shape: Shape, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != shape.numel() * 4 {
            return Err(Error::format(format!(
                "expected {} bytes for shape {shape}, got {}",
                shape.numel() * 4,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Tensor::from_vec(shape, data)
    }
}

/// Fill helper used by initializers: builds the tensor through a closure that
/// writes into a fresh buffer.
pub fn build_tensor<T: Scalar>(shape: Shape, fill: impl FnOnce(&mut [T])) -> Tensor<T> {
    let mut data = vec![T::zero(); shape.numel()];
    fill(&mut data);
    Tensor {
        shape,
        data: Arc::new(data),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_indexing_is_row_major() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.at(0, 0, 0, 0), 0);
        assert_eq!(s.at(0, 0, 0, 1), 1);
        assert_eq!(s.at(0, 0, 1, 0), 5);
        assert_eq!(s.at(0, 1, 0, 0), 20);
        assert_eq!(s.at(1, 0, 0, 0), 60);
        assert_eq!(s.numel(), 120);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        let r = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]);
        assert!(matches!(r, Err(Error::Dim(_))));
    }

    #[test]
    fn le_bytes_roundtrip() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.5f32, -2.25, 0.0]).unwrap();
        let b = t.to_le_bytes();
        let t2 = Tensor::from_le_bytes(t.shape(), &b).unwrap();
        assert_eq!(t.data(), t2.data());
    }
}
