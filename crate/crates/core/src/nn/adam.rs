use serde::{Deserialize, Serialize};

use super::layers::Param;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: one first/second moment buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments for parameters of the given lengths.
    pub fn new(config: AdamConfig, param_lens: &[usize]) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(config: AdamConfig, params: &[&Param]) -> Self {
        let lens: Vec<usize> = params.iter().map(|p| p.value.len()).collect();
        Self::new(config, &lens)
    }

    /// One bias-corrected Adam update of every parameter from its `grad`.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        let lens_match = params
            .iter()
            .zip(&self.first_moment)
            .all(|(p, m)| p.value.len() == m.len() && p.grad.len() == m.len());
        if !lens_match {
            return Err(Error::shape("parameter and moment lengths differ"));
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let Param { value, grad } = &mut **p;
            adam_update(value.data_mut(), grad, m, v, &c, bc1, bc2);
        }
        Ok(())
    }
}

fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    c: &AdamConfig,
    bc1: f64,
    bc2: f64,
) {
    for (((w, &g), m), v) in param.iter_mut().zip(grad).zip(m).zip(v) {
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
    }
}

/// Adam step over raw slices: `params[i]` is updated from `grads[i]`.
pub fn adam_step(params: &mut [Vec<f64>], grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::shape(
            "params, gradients and optimizer state differ in count",
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::shape(
                "parameter, gradient and moment lengths differ",
            ));
        }
    }
    state.step_count += 1;
    let c = state.config;
    let t = state.step_count as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        adam_update(p, g, m, v, &c, bc1, bc2);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut state = AdamState::new(AdamConfig::default(), &[1]);
        let mut p = vec![vec![0.5]];
        adam_step(&mut p, &[vec![2.0]], &mut state).unwrap();
        assert!((p[0][0] - (0.5 - 0.001)).abs() < 1e-10);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut state = AdamState::new(AdamConfig::default(), &[3]);
        let mut p = vec![vec![0.1, -0.2, 0.3]];
        adam_step(&mut p, &[vec![0.0; 3]], &mut state).unwrap();
        assert_eq!(p[0], vec![0.1, -0.2, 0.3]);
    }

    #[test]
    fn minimizes_square() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut state = AdamState::new(cfg, &[1]);
        let mut w = vec![vec![1.0]];
        for _ in 0..100 {
            let g = vec![vec![2.0 * w[0][0]]];
            adam_step(&mut w, &g, &mut state).unwrap();
        }
        assert!(w[0][0].abs() < 0.1, "w = {}", w[0][0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut state = AdamState::new(AdamConfig::default(), &[2]);
        assert!(adam_step(&mut [vec![0.0]], &[vec![0.0]], &mut state).is_err());
        assert!(adam_step(&mut [vec![0.0; 2]], &[vec![0.0; 3]], &mut state).is_err());
    }
}
