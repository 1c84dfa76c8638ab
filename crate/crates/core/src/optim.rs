//! Full-batch Adam with bias-corrected moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest value a β coordinate may take after an update.
pub const BETA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("b1", self.b1), ("b2", self.b2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!(
                    "Adam {name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Adam eps must be > 0, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }
}

/// One Adam update of `theta` in place.
///
/// `theta -= lr · m̂ / (√v̂ + eps)` with `m̂ = m / (1 - b1^t)` and
/// `v̂ = v / (1 - b2^t)`. Coordinates listed in `beta_coords` are then
/// clipped to at least [`BETA_FLOOR`].
pub fn adam_step(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    config: &AdamConfig,
    beta_coords: &[usize],
) -> Result<()> {
    let d = theta.len();
    if grad.len() != d || state.m.len() != d || state.v.len() != d {
        return Err(Error::Shape(format!(
            "Adam expects matching lengths, got theta {d}, grad {}, moments {}/{}",
            grad.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    config.validate()?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.b1.powi(t);
    let c2 = 1.0 - config.b2.powi(t);
    for i in 0..d {
        let g = grad[i];
        state.m[i] = config.b1 * state.m[i] + (1.0 - config.b1) * g;
        state.v[i] = config.b2 * state.v[i] + (1.0 - config.b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        theta[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
    }
    for &i in beta_coords {
        if i >= d {
            return Err(Error::Shape(format!(
                "beta coordinate {i} out of range {d}"
            )));
        }
        theta[i] = theta[i].max(BETA_FLOOR);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_theta() {
        let mut theta = vec![0.3, -1.2, 4.0];
        let before = theta.clone();
        let mut st = AdamState::new(3);
        adam_step(&mut theta, &[0.0; 3], &mut st, &AdamConfig::default(), &[]).unwrap();
        assert_eq!(theta, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        for g in [2.5, -0.01, 1e-3] {
            let mut theta = vec![1.0];
            let mut st = AdamState::new(1);
            adam_step(&mut theta, &[g], &mut st, &cfg, &[]).unwrap();
            let moved = (1.0 - theta[0]).abs();
            let expected = cfg.learning_rate * g.abs() / (g.abs() + cfg.eps);
            assert!((moved - expected).abs() < 1e-15, "g={g}");
            assert!((moved - cfg.learning_rate).abs() <= cfg.learning_rate * cfg.eps / g.abs());
            assert_eq!(theta[0] < 1.0, g > 0.0);
        }
    }

    #[test]
    fn beta_coordinates_are_floored() {
        let mut theta = vec![0.0015, 0.0015];
        let mut st = AdamState::new(2);
        let cfg = AdamConfig::default();
        adam_step(&mut theta, &[1.0, 1.0], &mut st, &cfg, &[1]).unwrap();
        assert!(theta[0] < 0.0);
        assert_eq!(theta[1], BETA_FLOOR);
    }

    #[test]
    fn shape_and_hyperparameter_checks() {
        let mut st = AdamState::new(2);
        let cfg = AdamConfig::default();
        assert!(matches!(
            adam_step(&mut [0.0; 2], &[0.0; 3], &mut st, &cfg, &[]),
            Err(Error::Shape(_))
        ));
        let bad = AdamConfig { b2: 1.0, ..cfg };
        assert!(adam_step(&mut [0.0; 2], &[0.0; 2], &mut st, &bad, &[]).is_err());
    }

    #[test]
    fn deterministic_sequence() {
        let run = || {
            let mut theta = vec![0.5, -0.5];
            let mut st = AdamState::new(2);
            for k in 0..50 {
                let g = [theta[0] - 0.1 * k as f64, 2.0 * theta[1]];
                adam_step(&mut theta, &g, &mut st, &AdamConfig::default(), &[]).unwrap();
            }
            theta
        };
        assert_eq!(run(), run());
    }
}
