//! Executor abstraction: network forward passes are written once, generic
//! over [`Exec`], and run either directly on tensors ([`EvalExec`]) or
//! recorded on a [`Tape`] for training.

use super::ops::{self, ResizeMode, Scale};
use super::tape::{Tape, Var};
use super::{Scalar, Tensor};
use crate::error::Result;

pub trait Exec<T: Scalar> {
    /// Handle to a value flowing through the network.
    type V: Clone;

    /// Lift an input tensor (no gradient).
    fn constant(&mut self, t: Tensor<T>) -> Self::V;
    /// Lift a trainable parameter tensor.
    fn parameter(&mut self, t: Tensor<T>) -> Self::V;
    /// Materialize a handle back into a tensor.
    fn value(&self, v: &Self::V) -> Tensor<T>;

    fn conv2d(&mut self, x: &Self::V, w: &Self::V, b: &Self::V, stride: usize, pad: usize) -> Result<Self::V>;
    fn relu(&mut self, x: &Self::V) -> Result<Self::V>;
    fn resize(&mut self, x: &Self::V, scale: Scale, mode: ResizeMode) -> Result<Self::V>;
    fn concat(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn scale_by(&mut self, x: &Self::V, c: T) -> Result<Self::V>;
    fn add_const(&mut self, x: &Self::V, c: T) -> Result<Self::V>;
    fn mul_scalar(&mut self, x: &Self::V, s: &Self::V) -> Result<Self::V>;
    fn pow_const(&mut self, x: &Self::V, p: f64) -> Result<Self::V>;
    fn mean_all(&mut self, x: &Self::V) -> Result<Self::V>;
    fn l1_loss(&mut self, pred: &Self::V, target: &Self::V) -> Result<Self::V>;
}

/// Direct evaluation: values are tensors, nothing is recorded.
#[derive(Default)]
pub struct EvalExec;

impl<T: Scalar> Exec<T> for EvalExec {
    type V = Tensor<T>;

    fn constant(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }
    fn parameter(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }
    fn value(&self, v: &Tensor<T>) -> Tensor<T> {
        v.clone()
    }

    fn conv2d(&mut self, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        ops::conv2d(x, w, b, stride, pad)
    }
    fn relu(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::relu(x))
    }
    fn resize(&mut self, x: &Tensor<T>, scale: Scale, mode: ResizeMode) -> Result<Tensor<T>> {
        ops::resize(x, scale, mode)
    }
    fn concat(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::concat_channels(a, b)
    }
    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::add(a, b)
    }
    fn sub(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::sub(a, b)
    }
    fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        ops::mul(a, b)
    }
    fn scale_by(&mut self, x: &Tensor<T>, c: T) -> Result<Tensor<T>> {
        Ok(ops::scale_by(x, c))
    }
    fn add_const(&mut self, x: &Tensor<T>, c: T) -> Result<Tensor<T>> {
        Ok(ops::add_const(x, c))
    }
    fn mul_scalar(&mut self, x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
        ops::mul_scalar(x, s)
    }
    fn pow_const(&mut self, x: &Tensor<T>, p: f64) -> Result<Tensor<T>> {
        Ok(ops::pow_const(x, p))
    }
    fn mean_all(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::mean_all(x))
    }
    fn l1_loss(&mut self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
        ops::l1_loss(pred, target)
    }
}

impl<T: Scalar> Exec<T> for Tape<T> {
    type V = Var;

    fn constant(&mut self, t: Tensor<T>) -> Var {
        Tape::constant(self, t)
    }
    fn parameter(&mut self, t: Tensor<T>) -> Var {
        Tape::param(self, t)
    }
    fn value(&self, v: &Var) -> Tensor<T> {
        Tape::value(self, *v).clone()
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: &Var, stride: usize, pad: usize) -> Result<Var> {
        Tape::conv2d(self, *x, *w, *b, stride, pad)
    }
    fn relu(&mut self, x: &Var) -> Result<Var> {
        Ok(Tape::relu(self, *x))
    }
    fn resize(&mut self, x: &Var, scale: Scale, mode: ResizeMode) -> Result<Var> {
        Tape::resize(self, *x, scale, mode)
    }
    fn concat(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::concat(self, *a, *b)
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::add(self, *a, *b)
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::sub(self, *a, *b)
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::mul(self, *a, *b)
    }
    fn scale_by(&mut self, x: &Var, c: T) -> Result<Var> {
        Ok(Tape::scale_by(self, *x, c))
    }
    fn add_const(&mut self, x: &Var, c: T) -> Result<Var> {
        Ok(Tape::add_const(self, *x, c))
    }
    fn mul_scalar(&mut self, x: &Var, s: &Var) -> Result<Var> {
        Tape::mul_scalar(self, *x, *s)
    }
    fn pow_const(&mut self, x: &Var, p: f64) -> Result<Var> {
        Ok(Tape::pow_const(self, *x, p))
    }
    fn mean_all(&mut self, x: &Var) -> Result<Var> {
        Ok(Tape::mean_all(self, *x))
    }
    fn l1_loss(&mut self, pred: &Var, target: &Var) -> Result<Var> {
        Tape::l1_loss(self, *pred, *target)
    }
}
