//! Plain Adam with bias correction.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &AdamConfig) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam: expected {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let cfg = AdamConfig::default();
        let mut params = vec![1.0, -2.0, 3.0];
        let mut state = AdamState::new(3);
        state.step(&mut params, &[0.0, 0.0, 0.0], &cfg).unwrap();
        assert_eq!(params, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_roughly_lr_times_sign() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut params = vec![0.0, 0.0];
        let mut state = AdamState::new(2);
        state.step(&mut params, &[0.37, -1.9], &cfg).unwrap();
        assert!((params[0] + cfg.learning_rate).abs() < 1e-6);
        assert!((params[1] - cfg.learning_rate).abs() < 1e-6);
    }

    #[test]
    fn updates_are_deterministic() {
        let cfg = AdamConfig::default();
        let mut a = (vec![0.5, 0.5], AdamState::new(2));
        let mut b = (vec![0.5, 0.5], AdamState::new(2));
        for i in 0..10 {
            let g = [(i as f64).sin(), (i as f64).cos()];
            a.1.step(&mut a.0, &g, &cfg).unwrap();
            b.1.step(&mut b.0, &g, &cfg).unwrap();
        }
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut params = vec![5.0];
        let mut state = AdamState::new(1);
        for _ in 0..2000 {
            let g = [2.0 * (params[0] - 1.5)];
            state.step(&mut params, &g, &cfg).unwrap();
        }
        assert!((params[0] - 1.5).abs() < 1e-2);
    }
}
