use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize], config: AdamConfig) -> Result<Self> {
        Ok(Self {
            m: Tensor::zeros(shape)?,
            v: Tensor::zeros(shape)?,
            t: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            lr: config.lr,
        })
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(Error::shape(format!(
            "adam step on param {:?}, grad {:?}, state {:?}",
            param.shape(),
            grad.shape(),
            state.m.shape()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::from_f64_lossy(state.beta1);
    let b2 = T::from_f64_lossy(state.beta2);
    let one = T::one();
    let m_corr = T::from_f64_lossy(1.0 / (1.0 - state.beta1.powi(t)));
    let v_corr = T::from_f64_lossy(1.0 / (1.0 - state.beta2.powi(t)));
    let lr = T::from_f64_lossy(state.lr);
    let eps = T::from_f64_lossy(state.epsilon);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m * m_corr;
        let v_hat = *v * v_corr;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
