use serde::{Deserialize, Serialize};

use super::spec::ModelWeights;
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates and the number of steps applied so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }
}

/// Bias-corrected Adam update. Pure: inputs are left untouched.
pub fn adam_step(
    weights: &ModelWeights,
    grad: &[f64],
    state: &OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(ModelWeights, OptimizerState), ModelError> {
    let mut weights = weights.clone();
    let mut state = state.clone();
    adam_step_in_place(&mut weights.params, grad, &mut state, lr, cfg)?;
    Ok((weights, state))
}

pub(crate) fn adam_step_in_place(
    params: &mut [f64],
    grad: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), ModelError> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(ModelError::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    for (what, len) in [
        ("gradient", grad.len()),
        ("first moment", state.first_moment.len()),
        ("second moment", state.second_moment.len()),
    ] {
        if len != params.len() {
            return Err(ModelError::Shape {
                what,
                expected: params.len(),
                actual: len,
            });
        }
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(ModelError::NonFinite("gradient"));
    }

    let t = state.step_count + 1;
    let bias1 = 1.0 - cfg.beta1.powf(t as f64);
    let bias2 = 1.0 - cfg.beta2.powf(t as f64);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    state.step_count = t;
    Ok(())
}
