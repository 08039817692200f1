use crate::numeric::{ParamStore, Parameter, Tensor};
use crate::scalar::Scalar;

/// Per-parameter Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Tensor<T>,
    pub second_moment: Tensor<T>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize], lr: f64) -> Self {
        Self {
            first_moment: Tensor::zeros(shape),
            second_moment: Tensor::zeros(shape),
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `p` from its current gradient.
pub fn adam_step<T: Scalar>(p: &mut Parameter<T>, s: &mut AdamState<T>) {
    s.step_count += 1;
    let b1 = T::lit(s.beta1);
    let b2 = T::lit(s.beta2);
    let one = T::one();
    let bc1 = one - T::lit(s.beta1.powi(s.step_count.min(i32::MAX as u64) as i32));
    let bc2 = one - T::lit(s.beta2.powi(s.step_count.min(i32::MAX as u64) as i32));
    let lr = T::lit(s.lr);
    let eps = T::lit(s.eps);
    let m = s.first_moment.data_mut();
    let v = s.second_moment.data_mut();
    for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam over every parameter of a store.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    states: Vec<AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        Self { states: store.iter().map(|p| AdamState::new(p.value.shape(), lr)).collect() }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>) {
        for (p, s) in store.iter_mut().zip(&mut self.states) {
            adam_step(p, s);
        }
    }

    pub fn states(&self) -> &[AdamState<T>] {
        &self.states
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64, g: f64) -> Parameter<f64> {
        let mut p = Parameter::new("w", Tensor::scalar(v));
        p.grad = Tensor::scalar(g);
        p
    }

    #[test]
    fn zero_grad_leaves_value() {
        let mut p = scalar_param(1.5, 0.0);
        let mut s = AdamState::new(&[1], 0.1);
        adam_step(&mut p, &mut s);
        assert_eq!(p.value.data()[0], 1.5);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_param(0.0, 1.0);
        let mut s = AdamState::new(&[1], 0.1);
        adam_step(&mut p, &mut s);
        // m̂ = 1, v̂ = 1, so Δ = -0.1 / (1 + 1e-8).
        assert!((p.value.data()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn repeated_gradient_moves_monotonically() {
        let mut p = scalar_param(0.0, -2.0);
        let mut s = AdamState::new(&[1], 0.01);
        adam_step(&mut p, &mut s);
        let after_one = p.value.data()[0];
        adam_step(&mut p, &mut s);
        let after_two = p.value.data()[0];
        assert!(after_one > 0.0 && after_two > after_one);
        assert_eq!(s.step_count, 2);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut p = scalar_param(0.3, 5.0);
        let mut s = AdamState::new(&[1], 0.0);
        for _ in 0..10 {
            adam_step(&mut p, &mut s);
        }
        assert_eq!(p.value.data()[0], 0.3);
    }
}
