//! Bias-corrected Adam, ascent convention (the objective is maximized).

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: usize,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// One ascent step on `params` in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract("adam dimension mismatch"));
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] += cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: AdamConfig = AdamConfig {
        learning_rate: 0.01,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut st = AdamState::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        adam_step(&mut st, &mut p, &[0.0, 0.0, 0.0], &CFG).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate_times_sign() {
        // bias correction makes the first update lr * g / (|g| + eps)
        for &g in &[3.0, -0.04, 1e-6] {
            let mut st = AdamState::new(1);
            let mut p = vec![0.0];
            adam_step(&mut st, &mut p, &[g], &CFG).unwrap();
            let expect = CFG.learning_rate * g / (g.abs() + CFG.epsilon);
            assert!(
                (p[0] - expect).abs() < 1e-12,
                "g {}: step {} vs {}",
                g,
                p[0],
                expect
            );
            assert!((p[0] - CFG.learning_rate * g.signum()).abs() < 2e-4);
        }
    }

    #[test]
    fn identical_runs_produce_identical_trajectories() {
        let grads = [0.3, -0.7, 0.1];
        let run = || {
            let mut st = AdamState::new(3);
            let mut p = vec![0.0; 3];
            for k in 0..100 {
                let g: Vec<f64> = grads.iter().map(|v| v * ((k % 5) as f64 - 2.0)).collect();
                adam_step(&mut st, &mut p, &g, &CFG).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
