//! Bias-corrected Adam.

use crate::error::{Error, Result};

/// First/second moment estimates for one parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state with the usual defaults: alpha 0.001, beta1 0.9,
    /// beta2 0.999, epsilon 1e-8.
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update: moments, bias correction, then
/// `p -= alpha * m_hat / (sqrt(v_hat) + epsilon)`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam buffers disagree: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - state.beta1.powi(state.t as i32);
    let c2 = 1.0 - state.beta2.powi(state.t as i32);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= state.alpha * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = vec![1.5, -2.0, 0.0];
        let g = vec![0.0; 3];
        let mut st = AdamState::new(3);
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        assert_eq!(p, vec![1.5, -2.0, 0.0]);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // g=1 on a fresh state: m=0.1, v=0.001, m_hat=1, v_hat=1,
        // step = alpha / (1 + eps) ~ alpha.
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut st).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15, "{}", p[0]);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut p = vec![0.7, 0.7];
        let mut st = AdamState::new(2);
        for step in 0..20 {
            let g = (step as f64 * 0.3).sin();
            adam_step(&mut p, &[g, g], &mut st).unwrap();
            assert_eq!(p[0], p[1]);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![0.0; 2];
        let mut st = AdamState::new(3);
        assert!(adam_step(&mut p, &[0.0; 2], &mut st).is_err());
    }

    #[test]
    fn alpha_scales_the_step() {
        let mut p1 = vec![0.0];
        let mut p2 = vec![0.0];
        let mut s1 = AdamState::new(1);
        let mut s2 = AdamState::new(1);
        s2.alpha = 0.01;
        adam_step(&mut p1, &[2.0], &mut s1).unwrap();
        adam_step(&mut p2, &[2.0], &mut s2).unwrap();
        assert!((p2[0] / p1[0] - 10.0).abs() < 1e-9);
    }
}
