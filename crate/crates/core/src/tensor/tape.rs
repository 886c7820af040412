//! Wengert tape: ops recorded in order during the forward pass, gradients
//! computed by one reverse sweep. A tape is single-owner and is consumed by
//! exactly one backward pass.

use super::ops::{self, ResizeMode, Scale};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Relu { x: Var },
    Resize { x: Var, scale: Scale, mode: ResizeMode },
    Concat { a: Var, b: Var, ca: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    ScaleBy { x: Var, c: f64 },
    AddConst { x: Var },
    MulScalar { x: Var, s: Var },
    PowConst { x: Var, p: f64 },
    MeanAll { x: Var },
    L1 { pred: Var, target: Var },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Record a leaf that will receive a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Record a leaf that does not need a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg2(&self, a: Var, b: Var) -> bool {
        self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let value = ops::conv2d(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let rg = self.rg2(x, w) || self.nodes[b.0].requires_grad;
        Ok(self.push(value, rg, Op::Conv2d { x, w, b, stride, pad }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = ops::relu(self.value(x));
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, rg, Op::Relu { x })
    }

    pub fn resize(&mut self, x: Var, scale: Scale, mode: ResizeMode) -> Result<Var> {
        let value = ops::resize(self.value(x), scale, mode)?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, rg, Op::Resize { x, scale, mode }))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let ca = self.value(a).shape().c;
        let value = ops::concat_channels(self.value(a), self.value(b))?;
        let rg = self.rg2(a, b);
        Ok(self.push(value, rg, Op::Concat { a, b, ca }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::add(self.value(a), self.value(b))?;
        let rg = self.rg2(a, b);
        Ok(self.push(value, rg, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::sub(self.value(a), self.value(b))?;
        let rg = self.rg2(a, b);
        Ok(self.push(value, rg, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::mul(self.value(a), self.value(b))?;
        let rg = self.rg2(a, b);
        Ok(self.push(value, rg, Op::Mul { a, b }))
    }

    pub fn scale_by(&mut self, x: Var, c: T) -> Var {
        let value = ops::scale_by(self.value(x), c);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, rg, Op::ScaleBy { x, c: c.as_f64() })
    }

    pub fn add_const(&mut self, x: Var, c: T) -> Var {
        let value = ops::add_const(self.value(x), c);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, rg, Op::AddConst { x })
    }

    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let value = ops::mul_scalar(self.value(x), self.value(s))?;
        let rg = self.rg2(x, s);
        Ok(self.push(value, rg, Op::MulScalar { x, s }))
    }

    pub fn pow_const(&mut self, x: Var, p: f64) -> Var {
        let value = ops::pow_const(self.value(x), p);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, rg, Op::PowConst { x, p })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let value = ops::mean_all(self.value(x));
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, rg, Op::MeanAll { x })
    }

    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let value = ops::l1_loss(self.value(pred), self.value(target))?;
        let rg = self.rg2(pred, target);
        Ok(self.push(value, rg, Op::L1 { pred, target }))
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        match &mut grads[v.0] {
            Some(existing) => {
                *existing = ops::add(existing, &g).expect("gradient shapes agree");
            }
            slot => *slot = Some(g),
        }
    }

    /// Populate gradients of every grad-requiring node reachable from `loss`.
    /// The tape is consumed: a second backward is a usage error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::usage("tape already consumed by a backward pass"));
        }
        if self.nodes.is_empty() {
            return Err(Error::usage("backward on an empty tape"));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::usage("backward requires a scalar loss"));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(dy) = grads[id].clone() else { continue };
            match self.nodes[id].op.clone() {
                Op::Leaf => {}
                Op::Conv2d { x, w, b, stride, pad } => {
                    let (dx, dw, db) =
                        ops::conv2d_backward(&dy, self.value(x), self.value(w), stride, pad);
                    if self.nodes[x.0].requires_grad {
                        Self::accumulate(&mut grads, x, dx);
                    }
                    if self.nodes[w.0].requires_grad {
                        Self::accumulate(&mut grads, w, dw);
                    }
                    if self.nodes[b.0].requires_grad {
                        Self::accumulate(&mut grads, b, db);
                    }
                }
                Op::Relu { x } => {
                    let dx = ops::relu_backward(&dy, self.value(x));
                    Self::accumulate(&mut grads, x, dx);
                }
                Op::Resize { x, scale, mode } => {
                    let dx = ops::resize_backward(&dy, self.value(x).shape(), scale, mode);
                    Self::accumulate(&mut grads, x, dx);
                }
                Op::Concat { a, b, ca } => {
                    let (da, db) = ops::concat_backward(&dy, ca);
                    if self.nodes[a.0].requires_grad {
                        Self::accumulate(&mut grads, a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        Self::accumulate(&mut grads, b, db);
                    }
                }
                Op::Add { a, b } => {
                    if self.nodes[a.0].requires_grad {
                        Self::accumulate(&mut grads, a, dy.clone());
                    }
                    if self.nodes[b.0].requires_grad {
                        Self::accumulate(&mut grads, b, dy.clone());
                    }
                }
                Op::Sub { a, b } => {
                    if self.nodes[a.0].requires_grad {
                        Self::accumulate(&mut grads, a, dy.clone());
                    }
                    if self.nodes[b.0].requires_grad {
                        Self::accumulate(&mut grads, b, ops::scale_by(&dy, -T::one()));
                    }
                }
                Op::Mul { a, b } => {
                    if self.nodes[a.0].requires_grad {
                        let da = ops::mul(&dy, self.value(b)).expect("mul grad shape");
                        Self::accumulate(&mut grads, a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db = ops::mul(&dy, self.value(a)).expect("mul grad shape");
                        Self::accumulate(&mut grads, b, db);
                    }
                }
                Op::ScaleBy { x, c } => {
                    Self::accumulate(&mut grads, x, ops::scale_by(&dy, T::from_f64(c)));
                }
                Op::AddConst { x } => {
                    Self::accumulate(&mut grads, x, dy.clone());
                }
                Op::MulScalar { x, s } => {
                    let sval = self.value(s).item();
                    if self.nodes[x.0].requires_grad {
                        Self::accumulate(&mut grads, x, ops::scale_by(&dy, sval));
                    }
                    if self.nodes[s.0].requires_grad {
                        let ds: T = dy
                            .data()
                            .iter()
                            .zip(self.value(x).data())
                            .map(|(&d, &v)| d * v)
                            .sum();
                        Self::accumulate(&mut grads, s, Tensor::scalar(ds));
                    }
                }
                Op::PowConst { x, p } => {
                    let dx = ops::pow_const_backward(&dy, self.value(x), p);
                    Self::accumulate(&mut grads, x, dx);
                }
                Op::MeanAll { x } => {
                    let xv = self.value(x);
                    let g = dy.item() / T::from_f64(xv.numel() as f64);
                    Self::accumulate(&mut grads, x, Tensor::full(xv.shape(), g));
                }
                Op::L1 { pred, target } => {
                    let dp = ops::l1_loss_backward(dy.item(), self.value(pred), self.value(target));
                    if self.nodes[pred.0].requires_grad {
                        Self::accumulate(&mut grads, pred, dp);
                    } else if self.nodes[target.0].requires_grad {
                        let dt = ops::l1_loss_backward(-dy.item(), self.value(pred), self.value(target));
                        Self::accumulate(&mut grads, target, dt);
                    }
                }
            }
            grads[id] = None; // free intermediate gradients as we go
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(dy);
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn one_parameter_l1_gradient() {
        // loss = mean |w*x - y|, scalar w: dloss/dw = mean(sign(w*x - y) * x)
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0f64, 2.0, -3.0]).unwrap();
        let y = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.5f64, 0.5, 0.5]).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(2.0f64));
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let wx = tape.mul_scalar(xv, w).unwrap();
        let loss = tape.l1_loss(wx, yv).unwrap();
        let grads = tape.backward(loss).unwrap();
        let got = grads.get(w).unwrap().item();
        let want: f64 = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&xi, &yi)| (2.0 * xi - yi).signum() * xi)
            .sum::<f64>()
            / 3.0;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn double_backward_is_usage_error() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(1.0f64));
        let l = tape.mean_all(w);
        tape.backward(l).unwrap();
        assert!(matches!(tape.backward(l), Err(Error::Usage(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2)));
        assert!(matches!(tape.backward(w), Err(Error::Usage(_))));
    }

    #[test]
    fn replay_determinism() {
        // two identical forward+backward passes produce bit-identical grads
        let run = || {
            let mut tape = Tape::new();
            let x = Tensor::from_vec(Shape::new(1, 2, 3, 3), (0..18).map(|i| (i as f32) * 0.1 - 0.9).collect())
                .unwrap();
            let w = Tensor::from_vec(Shape::new(2, 2, 3, 3), (0..36).map(|i| ((i * 7 % 11) as f32) * 0.05).collect())
                .unwrap();
            let b = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.1f32, -0.2]).unwrap();
            let xv = tape.constant(x);
            let wv = tape.param(w);
            let bv = tape.param(b);
            let y = tape.conv2d(xv, wv, bv, 1, 1).unwrap();
            let r = tape.relu(y);
            let loss = tape.mean_all(r);
            let g = tape.backward(loss).unwrap();
            (
                g.get(wv).unwrap().data().to_vec(),
                g.get(bv).unwrap().data().to_vec(),
            )
        };
        let (w1, b1) = run();
        let (w2, b2) = run();
        assert_eq!(w1, w2);
        assert_eq!(b1, b2);
    }
}
