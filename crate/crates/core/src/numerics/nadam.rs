use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NadamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor (Adam with Nesterov momentum).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NadamState {
    pub config: NadamConfig,
    step: u64,
    first: Matrix,
    second: Matrix,
}

impl NadamState {
    pub fn new(config: NadamConfig, rows: usize, cols: usize) -> Self {
        NadamState {
            config,
            step: 0,
            first: Matrix::zeros(rows, cols),
            second: Matrix::zeros(rows, cols),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update:
    ///
    /// ```text
    /// m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²
    /// m̂ = β₁m/(1−β₁^{t+1}) + (1−β₁)g/(1−β₁^t),  v̂ = v/(1−β₂^t)
    /// θ ← θ − lr·m̂/(√v̂ + ε)
    /// ```
    pub fn step(&mut self, params: &mut Matrix, grads: &Matrix) -> Result<()> {
        if params.shape() != grads.shape() || params.shape() != self.first.shape() {
            return Err(Error::shape(
                "nadam_step",
                format!(
                    "params {:?}, grads {:?}, state {:?}",
                    params.shape(),
                    grads.shape(),
                    self.first.shape()
                ),
            ));
        }
        self.step += 1;
        let NadamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step as i32;
        let bc1_next = 1.0 - b1.powi(t + 1);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let p = params.as_mut_slice();
        let m = self.first.as_mut_slice();
        let v = self.second.as_mut_slice();
        for (((p, &g), m), v) in p.iter_mut().zip(grads.as_slice()).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = b1 * *m / bc1_next + (1.0 - b1) * g / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Matrix {
        Matrix::from_vec(1, 1, vec![x]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_fresh_params_unchanged() {
        let mut state = NadamState::new(NadamConfig::default(), 2, 3);
        let mut params = Matrix::from_fn(2, 3, |i, j| (i + j) as f64 - 1.5);
        let before = params.clone();
        state.step(&mut params, &Matrix::zeros(2, 3)).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn constant_positive_gradient_decreases_monotonically() {
        let mut state = NadamState::new(NadamConfig::default(), 1, 1);
        let mut x = scalar(0.0);
        let mut prev = x.get(0, 0);
        for _ in 0..1000 {
            state.step(&mut x, &scalar(0.3)).unwrap();
            assert!(x.get(0, 0) < prev);
            prev = x.get(0, 0);
        }
        assert_eq!(state.step_count(), 1000);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let config = NadamConfig {
            learning_rate: 0.01,
            ..NadamConfig::default()
        };
        let mut state = NadamState::new(config, 1, 1);
        let mut x = scalar(5.0);
        for _ in 0..2000 {
            let g = 2.0 * x.get(0, 0);
            state.step(&mut x, &scalar(g)).unwrap();
        }
        assert!(x.get(0, 0).abs() < 1e-3, "x = {}", x.get(0, 0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut state = NadamState::new(NadamConfig::default(), 1, 2);
        let mut p = Matrix::zeros(1, 2);
        assert!(state.step(&mut p, &Matrix::zeros(2, 1)).is_err());
        assert_eq!(state.step_count(), 0);
    }
}
