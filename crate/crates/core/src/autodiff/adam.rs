use crate::error::Result;
use crate::tensor::Tensor;

use super::param::{ParamSet, Parameter};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(param: &Parameter, hyper: AdamHyper) -> Self {
        Self {
            m: Tensor::zeros(param.value.shape()),
            v: Tensor::zeros(param.value.shape()),
            t: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam update. The gradient is zeroed afterwards.
pub fn adam_step(param: &mut Parameter, state: &mut AdamState) {
    let AdamHyper {
        lr,
        beta1,
        beta2,
        eps,
    } = state.hyper;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - libm::pow(beta1, t as f64);
    let c2 = 1.0 - libm::pow(beta2, t as f64);
    let values = param.value.data_mut();
    let grads = param.grad.data_mut();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for i in 0..values.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        values[i] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        grads[i] = 0.0;
    }
}

/// Adam over every parameter of a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    states: alloc::vec::Vec<AdamState>,
}

impl Adam {
    pub fn new(params: &ParamSet, hyper: AdamHyper) -> Self {
        Self {
            states: params.iter().map(|p| AdamState::new(p, hyper)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for (p, s) in params.iter_mut().zip(&mut self.states) {
            adam_step(p, s);
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.first().map_or(0, |s| s.t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn param_with_grad(value: f64, grad: f64) -> Parameter {
        let mut p = Parameter::new("p", Tensor::vector(vec![value; 3]));
        p.grad.fill(grad);
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = param_with_grad(0.5, 1.0);
        let mut s = AdamState::new(&p, AdamHyper::default());
        adam_step(&mut p, &mut s);
        for v in p.value.data() {
            assert!((v - (0.5 - 0.001)).abs() < 1e-6);
        }
        assert!(p.grad.data().iter().all(|g| *g == 0.0));
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_grad_is_a_no_op() {
        let mut p = param_with_grad(0.5, 0.0);
        let mut s = AdamState::new(&p, AdamHyper::default());
        adam_step(&mut p, &mut s);
        assert_eq!(p.value.data(), &[0.5; 3]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        for g in [2.0, -0.3] {
            let mut p = param_with_grad(0.0, g);
            let mut s = AdamState::new(&p, AdamHyper::default());
            adam_step(&mut p, &mut s);
            let after_one = p.value.data()[0];
            p.grad.fill(g);
            adam_step(&mut p, &mut s);
            let after_two = p.value.data()[0];
            let dir = -g.signum();
            assert!(after_one * dir > 0.0);
            assert!((after_two - after_one) * dir > 0.0);
            assert!(s.v.data().iter().all(|v| *v >= 0.0));
        }
    }
}
