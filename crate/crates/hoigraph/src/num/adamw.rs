//! AdamW parameter updates with decoupled weight decay.

use crate::error::{Error, Result};
use crate::num::matrix::{Matrix, Param};

/// Per-parameter optimizer state.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub first_moment: Matrix,
    pub second_moment: Matrix,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWState {
    pub fn new(param: &Param, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamWState {
            first_moment: Matrix::zeros(param.value.rows(), param.value.cols()),
            second_moment: Matrix::zeros(param.value.rows(), param.value.cols()),
            step: 0,
            beta1,
            beta2,
            eps,
            weight_decay,
        }
    }

    /// Defaults used throughout: beta1 = 0.9 (the stated momentum), beta2 =
    /// 0.999, eps = 1e-8.
    pub fn with_defaults(param: &Param, weight_decay: f64) -> Self {
        AdamWState::new(param, 0.9, 0.999, 1e-8, weight_decay)
    }
}

/// One AdamW step. Weight decay is decoupled: values first shrink by
/// `1 - lr * wd`, then the bias-corrected moment update applies.
pub fn adamw_step(name: &str, param: &mut Param, state: &mut AdamWState, lr: f64) -> Result<()> {
    if !param.value.same_shape(&state.first_moment) {
        return Err(Error::Shape(format!(
            "optimizer state shape does not match parameter `{name}`"
        )));
    }
    if !param.grad.all_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient for parameter `{name}`"
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let decay = 1.0 - lr * state.weight_decay;

    let values = param.value.data_mut();
    let grads = param.grad.data();
    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    for i in 0..values.len() {
        values[i] *= decay;
        let g = grads[i];
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        values[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}
