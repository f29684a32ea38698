use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adaptive-moment (Adam) state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl OptimState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self::with_betas(n_params, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(
        n_params: usize,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected descent step: `params -= lr · m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::DimensionMismatch {
                expected: self.first_moment.len(),
                found: params.len(),
            });
        }
        if grads.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                found: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::non_finite("optimizer gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_hand_computation() {
        // m1 = (1-b1) g, v1 = (1-b2) g^2; bias correction gives m̂ = g, v̂ = g^2,
        // so the first update is lr * g / (|g| + eps).
        let (lr, b1, b2, eps) = (0.1, 0.8, 0.99, 1e-8);
        let mut state = OptimState::with_betas(1, lr, b1, b2, eps);
        let mut w = [2.0];
        let g = 0.5;
        state.step(&mut w, &[g]).unwrap();
        let m1 = (1.0 - b1) * g;
        let v1 = (1.0 - b2) * g * g;
        let expected = 2.0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        assert!((w[0] - expected).abs() < 1e-15);
        assert!((w[0] - (2.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut state = OptimState::new(3, 0.01);
        let mut w = [1.0, -2.0, 3.0];
        state.step(&mut w, &[0.0; 3]).unwrap();
        assert_eq!(w, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn quadratic_bowl_descends() {
        let mut state = OptimState::new(2, 1e-2);
        let mut w = [1.0, -0.5];
        let mut norms = Vec::new();
        for _ in 0..200 {
            let g = [2.0 * w[0], 2.0 * w[1]];
            state.step(&mut w, &g).unwrap();
            norms.push((w[0] * w[0] + w[1] * w[1]).sqrt());
        }
        for pair in norms[10..].windows(2) {
            assert!(pair[1] < pair[0]);
        }
        assert!(norms[199] < 0.5 * norms[0]);
    }

    #[test]
    fn rejects_non_finite_and_mismatched() {
        let mut state = OptimState::new(2, 0.01);
        let mut w = [0.0, 0.0];
        assert!(matches!(
            state.step(&mut w, &[f64::NAN, 0.0]),
            Err(Error::NonFinite { .. })
        ));
        assert!(state.step(&mut w, &[0.0]).is_err());
        assert_eq!(state.step_count(), 0);
    }
}
