//! Parameters and the Adam update.

use crate::tensor::{Scalar, Tensor};

/// A trainable tensor with its gradient and Adam moment slots.
#[derive(Debug, Clone)]
pub struct Parameter<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
    pub step_count: u64,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            adam_m: grad.clone(),
            adam_v: grad.clone(),
            grad,
            value,
            step_count: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl Default for AdamHyper<f32> {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step; the gradient is zeroed afterward.
pub fn adam_step<T: Scalar>(p: &mut Parameter<T>, h: &AdamHyper<T>) {
    p.step_count += 1;
    let t = p.step_count as i32;
    let bc1 = T::one() - h.beta1.powi(t);
    let bc2 = T::one() - h.beta2.powi(t);
    let one = T::one();
    for i in 0..p.value.numel() {
        let g = p.grad.data()[i];
        let m = &mut p.adam_m.data_mut()[i];
        *m = h.beta1 * *m + (one - h.beta1) * g;
        let m_hat = *m / bc1;
        let v = &mut p.adam_v.data_mut()[i];
        *v = h.beta2 * *v + (one - h.beta2) * g * g;
        let v_hat = *v / bc2;
        p.value.data_mut()[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
    p.zero_grad();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Parameter<f64> {
        Parameter::new(Tensor::from_vec(&[1], vec![v]).unwrap())
    }

    fn hyper(lr: f64) -> AdamHyper<f64> {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    #[test]
    fn zero_gradient_is_identity_on_value() {
        let mut p = scalar_param(1.25);
        adam_step(&mut p, &hyper(0.1));
        assert_eq!(p.value.data()[0], 1.25);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn first_step_has_bias_corrected_magnitude() {
        let mut p = scalar_param(0.0);
        p.grad.data_mut()[0] = 1.0;
        adam_step(&mut p, &hyper(0.1));
        assert!((p.value.data()[0] + 0.1).abs() < 1e-7);
        // grad zeroed afterward
        assert_eq!(p.grad.data()[0], 0.0);
    }

    #[test]
    fn quadratic_converges_in_100_steps() {
        // Independent scalar recursion for f(p) = p^2, grad = 2p.
        let mut p = scalar_param(1.0);
        let h = hyper(0.1);
        for _ in 0..100 {
            p.grad.data_mut()[0] = 2.0 * p.value.data()[0];
            adam_step(&mut p, &h);
        }
        assert!(p.value.data()[0].abs() < 0.05, "p={}", p.value.data()[0]);
    }

    #[test]
    fn grad_shape_tracks_value_shape() {
        let p = Parameter::new(Tensor::<f32>::zeros(&[3, 4]));
        assert_eq!(p.grad.shape(), p.value.shape());
        assert_eq!(p.adam_m.shape(), p.value.shape());
        assert!(p.adam_v.data().iter().all(|v| *v == 0.0));
    }
}
