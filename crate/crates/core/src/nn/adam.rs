use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators, one slot per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            m: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter slot.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::Length { expected: state.m.len(), got: params.len().min(grads.len()) });
    }
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let c1 = 1.0 - libm::pow(beta1, state.t as f64);
    let c2 = 1.0 - libm::pow(beta2, state.t as f64);
    for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[slot].len() {
            return Err(Error::Length { expected: state.m[slot].len(), got: g.len() });
        }
        let (m, v) = (&mut state.m[slot], &mut state.v[slot]);
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(AdamConfig::default(), &[2]);
        adam_step(&mut [&mut p], &[vec![0.0, 0.0]], &mut st).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        for g in [1e-3, 0.5, -3.0, 1e4] {
            let mut p = vec![0.0];
            let mut st = AdamState::new(cfg, &[1]);
            adam_step(&mut [&mut p], &[vec![g]], &mut st).unwrap();
            let step = p[0].abs();
            assert!(step >= 0.99 * cfg.lr && step <= cfg.lr, "g={g}: {step}");
            assert!(p[0] * g < 0.0);
        }
    }

    #[test]
    fn descends_on_quadratic() {
        let mut w = vec![1.0];
        let mut st = AdamState::new(AdamConfig::default(), &[1]);
        let mut prev = w[0];
        for _ in 0..2 {
            let g = vec![w[0]];
            adam_step(&mut [&mut w], &[g], &mut st).unwrap();
            assert!(w[0] < prev);
            prev = w[0];
        }
        assert!(st.v[0].iter().all(|v| *v >= 0.0));
    }
}
