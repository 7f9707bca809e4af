//! Adam optimizer on flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("adam.lr", "must be finite and > 0"));
        }
        for (key, v) in [("adam.beta1", self.beta1), ("adam.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(key, "must lie in [0, 1)"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::invalid("adam.eps", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// First and second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam update, in place.
///
/// Rejects non-finite gradients before touching the state so a bad batch
/// cannot poison the moment accumulators.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::shape(
            "adam_step",
            format!("params/grads/state all length {}", params.len()),
            format!("grads {}, state {}", grads.len(), state.len()),
        ));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "adam_step gradient".to_string(),
            index: i,
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_is_noop() {
        let mut params = vec![1.0, -2.0, 0.5];
        let grads = vec![0.0; 3];
        let mut state = AdamState::new(3);
        adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
        assert_eq!(state.step, 1);
    }

    /// First step with grad 1 moves by almost exactly -lr: m_hat = 1,
    /// v_hat = 1, so delta = -lr / (1 + eps).
    #[test]
    fn first_step_scalar_hand_case() {
        let mut params = vec![0.0];
        let grads = vec![1.0];
        let mut state = AdamState::new(1);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        let expect = -0.1 / (1.0 + 1e-8);
        assert!((params[0] - expect).abs() < 1e-15, "{}", params[0]);
    }

    #[test]
    fn second_step_matches_manual_recurrence() {
        let cfg = AdamConfig::default();
        let mut params = vec![0.3];
        let mut state = AdamState::new(1);
        adam_step(&mut params, &[0.5], &mut state, &cfg).unwrap();
        adam_step(&mut params, &[-0.2], &mut state, &cfg).unwrap();

        // Manual replay of the same two steps.
        let (mut m, mut v, mut p) = (0.0, 0.0, 0.3);
        for (t, g) in [(1, 0.5f64), (2, -0.2)] {
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        assert!((params[0] - p).abs() < 1e-15);
        assert_eq!(state.step, 2);
    }

    #[test]
    fn non_finite_grad_names_index() {
        let mut params = vec![0.0, 0.0];
        let grads = vec![1.0, f64::NAN];
        let mut state = AdamState::new(2);
        let err = adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap_err();
        match err {
            Error::NonFinite { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected error {other:?}"),
        }
        // State untouched on failure.
        assert_eq!(state.step, 0);
        assert!(state.m.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut params = vec![0.0; 2];
        let mut state = AdamState::new(3);
        assert!(adam_step(&mut params, &[0.0; 2], &mut state, &AdamConfig::default()).is_err());
    }
}
