use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Adaptive-moment optimizer. Moments are created lazily on the first step
/// and matched to parameters by position.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    moments: Vec<(Matrix, Matrix)>,
    steps: u32,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, moments: Vec::new(), steps: 0 }
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// Descends along the gradients currently held by `model`.
    pub fn step<M: Parameterized>(&mut self, model: &mut M) -> Result<()> {
        let mut params = model.params_mut();
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (Matrix::zeros(p.value.rows(), p.value.cols()), Matrix::zeros(p.value.rows(), p.value.cols())))
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::State("optimizer state does not match the parameter list".into()));
        }
        for p in params.iter() {
            p.grad.ensure_finite(&format!("gradient of {}", p.name))?;
        }
        self.steps += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        for (p, (m, v)) in params.iter_mut().zip(&mut self.moments) {
            let g = p.grad.data();
            let w = p.value.data_mut();
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
