//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamwConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamwConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamwState {
    pub(crate) first: Vec<Tensor2>,
    pub(crate) second: Vec<Tensor2>,
    pub(crate) step: u64,
}

impl AdamwState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor2>) -> Self {
        let first: Vec<_> = params
            .into_iter()
            .map(|p| Tensor2::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            second: first.clone(),
            first,
            step: 0,
        }
    }

    pub fn from_parts(first: Vec<Tensor2>, second: Vec<Tensor2>, step: u64) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::dim("adamw_state", (first.len(), 0), (second.len(), 0)));
        }
        for (m, v) in first.iter().zip(&second) {
            if m.shape() != v.shape() {
                return Err(Error::dim("adamw_state", m.shape(), v.shape()));
            }
        }
        Ok(Self {
            first,
            second,
            step,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor2] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor2] {
        &self.second
    }
}

/// One AdamW update of every parameter tensor.
///
/// Weight decay shrinks the parameters directly (`p -= lr * wd * p`) before
/// the bias-corrected Adam step; it never enters the moment estimates.
pub fn adamw_step(
    params: &mut [&mut Tensor2],
    grads: &[Tensor2],
    state: &mut AdamwState,
    lr: f64,
    config: &AdamwConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::dim(
            "adamw_step",
            (params.len(), grads.len()),
            (state.first.len(), 0),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        if p.shape() != g.shape() {
            return Err(Error::dim("adamw_step", p.shape(), g.shape()));
        }
        if p.shape() != m.shape() {
            return Err(Error::dim("adamw_step", p.shape(), m.shape()));
        }
    }
    if !(lr > 0.0) {
        return Err(Error::Usage(format!("learning rate must be positive, got {lr}")));
    }

    state.step += 1;
    let t = state.step as i32;
    let AdamwConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = *config;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let decay = 1.0 - lr * weight_decay;

    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].values();
        let m = state.first[i].values_mut();
        let v = state.second[i].values_mut();
        for (j, pv) in p.values_mut().iter_mut().enumerate() {
            *pv *= decay;
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(weight_decay: f64) -> AdamwConfig {
        AdamwConfig {
            weight_decay,
            ..AdamwConfig::default()
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = Tensor2::from_vec(1, 3, vec![0.3, -1.0, 2.0]).unwrap();
        let before = p.clone();
        let mut state = AdamwState::new([&p]);
        adamw_step(&mut [&mut p], &[Tensor2::zeros(1, 3)], &mut state, 1e-3, &cfg(0.0)).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks_multiplicatively() {
        let mut p = Tensor2::from_vec(1, 3, vec![0.3, -1.0, 2.0]).unwrap();
        let before = p.clone();
        let mut state = AdamwState::new([&p]);
        adamw_step(&mut [&mut p], &[Tensor2::zeros(1, 3)], &mut state, 1e-3, &cfg(5e-4)).unwrap();
        let factor = 1.0 - 1e-3 * 5e-4;
        for (a, b) in p.values().iter().zip(before.values()) {
            assert_eq!(*a, b * factor);
        }
    }

    #[test]
    fn scalar_matches_hand_rolled_iteration() {
        // Reference: the textbook recurrences written out on plain floats.
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 1.0;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }

        let mut p = Tensor2::scalar(0.5);
        let mut state = AdamwState::new([&p]);
        for _ in 0..3 {
            adamw_step(&mut [&mut p], &[Tensor2::scalar(1.0)], &mut state, lr, &cfg(0.0)).unwrap();
        }
        assert!((p.values()[0] - x).abs() < 1e-15);
        // Each bias-corrected step with a constant unit gradient moves by ~lr.
        assert!((p.values()[0] - (0.5 - 0.3)).abs() < 1e-6);
        assert_eq!(state.step_count(), 3);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor2::zeros(2, 2);
        let mut state = AdamwState::new([&p]);
        let err = adamw_step(&mut [&mut p], &[Tensor2::zeros(1, 4)], &mut state, 1e-3, &cfg(0.0));
        assert!(matches!(err, Err(Error::Dimension { .. })));
        assert_eq!(state.step_count(), 0);
    }
}
