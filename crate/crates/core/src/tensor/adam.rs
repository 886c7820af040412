//! Adam optimizer state and update.

use super::{build_tensor, Scalar, Tensor};
use crate::error::{Error, Result};

/// Per-parameter first/second moment estimates plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(param_sizes: &[usize], lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: param_sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
            v: param_sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.m.len()
    }

    pub fn moments(&self, i: usize) -> (&[T], &[T]) {
        (&self.m[i], &self.v[i])
    }

    pub fn set_moments(&mut self, i: usize, m: Vec<T>, v: Vec<T>) {
        self.m[i] = m;
        self.v[i] = v;
    }

    /// One Adam update over all parameters. `grads[i] == None` leaves
    /// parameter `i` untouched (its moments are not advanced either).
    /// `lr_scale[i]` multiplies the base learning rate, which is how the
    /// switch parameters get their own rate.
    pub fn step(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Option<Tensor<T>>],
        lr_scale: &[f64],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::usage("adam: parameter/gradient count mismatch"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        let eps = T::from_f64(self.eps);

        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            if g.shape() != p.shape() {
                return Err(Error::usage(format!(
                    "adam: gradient shape {} does not match parameter {}",
                    g.shape(),
                    p.shape()
                )));
            }
            let rate = T::from_f64(self.lr * lr_scale[i] / bc1);
            let bc2s = T::from_f64(bc2.sqrt());
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let updated = build_tensor(p.shape(), |out| {
                for (((o, &pv), &gv), (mi, vi)) in out
                    .iter_mut()
                    .zip(p.data())
                    .zip(g.data())
                    .zip(m.iter_mut().zip(v.iter_mut()))
                {
                    *mi = b1 * *mi + ob1 * gv;
                    *vi = b2 * *vi + ob2 * gv * gv;
                    // rate folds in 1/(1-b1^t); v is rescaled by sqrt(1-b2^t)
                    *o = pv - rate * *mi / (vi.sqrt() / bc2s + eps);
                }
            });
            if !updated.all_finite() {
                return Err(Error::Numeric("adam produced non-finite parameters".into()));
            }
            *p = updated;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut st = AdamState::<f64>::new(&[3], 1e-2);
        let mut params = vec![Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap()];
        let grads = vec![Some(Tensor::zeros(Shape::new(1, 1, 1, 3)))];
        st.step(&mut params, &grads, &[1.0]).unwrap();
        assert_eq!(params[0].data(), &[1.0, 2.0, 3.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn constant_gradient_moves_at_lr() {
        // with a constant gradient, the Adam step size tends to lr
        let lr = 1e-2;
        let mut st = AdamState::<f64>::new(&[1], lr);
        let mut params = vec![Tensor::scalar(0.0f64)];
        let mut prev = 0.0;
        let mut step_sizes = Vec::new();
        for _ in 0..200 {
            let grads = vec![Some(Tensor::scalar(1.0f64))];
            st.step(&mut params, &grads, &[1.0]).unwrap();
            let cur = params[0].item();
            assert!(cur < prev, "monotone decrease");
            step_sizes.push(prev - cur);
            prev = cur;
        }
        let late = step_sizes[199];
        assert!((late - lr).abs() < lr * 0.05, "late step {late} vs lr {lr}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = (w-3)^2, gradient 2(w-3), from w=0 at lr 1e-2
        let mut st = AdamState::<f64>::new(&[1], 1e-2);
        let mut params = vec![Tensor::scalar(0.0f64)];
        for _ in 0..2000 {
            let w = params[0].item();
            let grads = vec![Some(Tensor::scalar(2.0 * (w - 3.0)))];
            st.step(&mut params, &grads, &[1.0]).unwrap();
        }
        let w = params[0].item();
        assert!((w - 3.0).abs() < 1e-2, "w = {w}");
    }
}
