//! Lion optimizer (sign of an interpolated momentum, decoupled weight decay).

use crate::error::{Result, TensorError};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LionConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for LionConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 0.05,
            beta1: 0.95,
            beta2: 0.98,
        }
    }
}

/// Per-parameter momentum buffers, zero-initialised.
#[derive(Debug, Clone, PartialEq)]
pub struct LionState {
    pub config: LionConfig,
    pub momentum: Vec<Tensor>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl LionState {
    pub fn new(config: LionConfig, params: &ParamSet) -> Self {
        let momentum = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        Self { config, momentum }
    }

    /// One update of a single tensor:
    /// `c = β₁m + (1−β₁)g; w ← w − lr·(sign(c) + wd·w); m ← β₂m + (1−β₂)g`.
    pub fn step_tensor(config: &LionConfig, param: &mut Tensor, grad: &Tensor, momentum: &mut Tensor) -> Result<()> {
        if param.shape() != grad.shape() || param.shape() != momentum.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "lion_step",
                lhs: param.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        if let Some(coord) = grad.data().iter().position(|g| !g.is_finite()) {
            return Err(TensorError::NonFinite { param: 0, coord });
        }
        let LionConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
        } = *config;
        let m = momentum.data_mut();
        for ((w, &g), m) in param.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()) {
            let c = beta1 * *m + (1.0 - beta1) * g;
            *w -= lr * (sign(c) + weight_decay * *w);
            *m = beta2 * *m + (1.0 - beta2) * g;
        }
        Ok(())
    }

    /// Updates every tensor of `params`. All gradients are checked before any
    /// parameter is touched, so a rejected step leaves the state unchanged.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.momentum.len() != params.len() {
            return Err(TensorError::Invalid(format!(
                "lion_step: {} params, {} grads, {} momentum buffers",
                params.len(),
                grads.len(),
                self.momentum.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(coord) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite { param: i, coord });
            }
        }
        for ((p, g), m) in params.tensors_mut().zip(grads).zip(self.momentum.iter_mut()) {
            Self::step_tensor(&self.config, p, g, m)?;
        }
        Ok(())
    }
}
