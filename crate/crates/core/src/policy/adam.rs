// Adam in the ascent direction (the policy maximizes expected reward).

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{powf, sqrt};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum AdamError {
    #[error("non-finite gradient at index {0}")]
    NonFiniteGradient(usize),
    #[error("gradient has {got} entries, expected {want}")]
    Length { got: usize, want: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub const DEFAULT_LR: f64 = 0.0006;

    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// `params += lr * m_hat / (sqrt(v_hat) + eps)`. On error nothing changes.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), AdamError> {
        if grad.len() != params.len() || grad.len() != self.m.len() {
            return Err(AdamError::Length {
                got: grad.len(),
                want: self.m.len(),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(AdamError::NonFiniteGradient(i));
        }
        self.t += 1;
        let c1 = 1.0 - powf(self.beta1, self.t as f64);
        let c2 = 1.0 - powf(self.beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] += self.lr * mh / (sqrt(vh) + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut a = Adam::new(3, 0.1);
        let mut p = [1.0, -2.0, 3.0];
        a.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_is_normalized() {
        let mut a = Adam::new(1, 0.0006);
        let mut p = [0.0];
        a.step(&mut p, &[0.37]).unwrap();
        let want = 0.0006 * 0.37 / (0.37 + 1e-8);
        assert!((p[0] - want).abs() < 1e-15);
    }

    #[test]
    fn ascends_a_quadratic() {
        // f(x) = -(x - 3)^2, gradient -2(x - 3).
        let mut a = Adam::new(1, 0.05);
        let mut x = [0.0];
        let f = |x: f64| -(x - 3.0) * (x - 3.0);
        let before = f(x[0]);
        let g = -2.0 * (x[0] - 3.0);
        a.step(&mut x, &[g]).unwrap();
        assert!(f(x[0]) > before);
        for _ in 0..2000 {
            let g = -2.0 * (x[0] - 3.0);
            a.step(&mut x, &[g]).unwrap();
        }
        assert!((x[0] - 3.0).abs() < 0.05);
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = Adam::new(2, 0.1);
        let mut p = [1.0, 1.0];
        assert_eq!(
            a.step(&mut p, &[0.0, f64::NAN]),
            Err(AdamError::NonFiniteGradient(1))
        );
        assert_eq!(p, [1.0, 1.0]);
        assert_eq!(a.t, 0);
    }
}
