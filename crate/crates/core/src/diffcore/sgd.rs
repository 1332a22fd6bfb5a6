use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState<S> {
    pub config: SgdConfig,
    velocity: Vec<S>,
}

impl<S: Scalar> SgdState<S> {
    pub fn new(config: SgdConfig, num_params: usize) -> Self {
        Self {
            config,
            velocity: vec![S::zero(); num_params],
        }
    }

    pub fn velocity(&self) -> &[S] {
        &self.velocity
    }

    pub fn reset(&mut self) {
        self.velocity.iter_mut().for_each(|v| *v = S::zero());
    }

    /// `g' = g + wd * theta; v = momentum * v + g'; theta -= lr * v`.
    pub fn step(&mut self, params: &mut [S], grads: &[S]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(Error::Shape {
                op: "sgd_step",
                detail: format!(
                    "{} params, {} grads, {} velocity slots",
                    params.len(),
                    grads.len(),
                    self.velocity.len()
                ),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("sgd_step: gradient coordinate {i} is {}", grads[i]),
            });
        }
        let lr = S::of(self.config.lr);
        let momentum = S::of(self.config.momentum);
        let wd = S::of(self.config.weight_decay);
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            let g = g + wd * *p;
            *v = momentum * *v + g;
            *p = *p - lr * *v;
        }
        Ok(())
    }
}
