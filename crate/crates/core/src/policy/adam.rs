use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::{PolicyError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moment estimates for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Result<Self> {
        let AdamConfig { learning_rate, beta1, beta2, eps } = config;
        if !(learning_rate > 0.0) || !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
            return Err(PolicyError::InvalidConfig(format!("{config:?}")));
        }
        let zeros: Vec<Vec<f64>> = params.iter().map(|t| vec![0.0; t.len()]).collect();
        Ok(Self { config, step: 0, first: zeros.clone(), second: zeros })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update `theta -= lr m̂ / (sqrt(v̂) + eps)`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(PolicyError::Dimension(format!(
                "{} parameters, {} gradients, state for {}",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.len() != m.len() {
                return Err(PolicyError::Dimension(format!("parameter {:?} with gradient {:?}", p.shape(), g.shape())));
            }
        }
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, (theta, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                *theta -= learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
