//! AdamW optimizer with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::lm::{LMGradient, LmError, ToyLMParams};

/// Optimizer hyperparameters. `beta1`, `beta2`, and `eps` use the
/// conventional defaults; learning rate and decay come from the
/// training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWHyper {
    pub fn new(lr: f64, weight_decay: f64) -> AdamWHyper {
        AdamWHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Step counter and first/second moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub step: u64,
    pub m: LMGradient,
    pub v: LMGradient,
    pub hyper: AdamWHyper,
}

impl OptState {
    /// Fresh state with zero moments, shaped like `params`.
    pub fn new(params: &ToyLMParams, hyper: AdamWHyper) -> OptState {
        OptState {
            step: 0,
            m: LMGradient::zeros_like(params),
            v: LMGradient::zeros_like(params),
            hyper,
        }
    }
}

/// Applies one AdamW update to `params` in place.
///
/// The weight decay term subtracts `lr * weight_decay * p` from each
/// parameter's pre-update value; it never passes through the moment
/// accumulators, so decay strength is independent of the gradient
/// scale.
pub fn adamw_step(
    params: &mut ToyLMParams,
    grads: &LMGradient,
    state: &mut OptState,
) -> Result<(), LmError> {
    let shapes_match = grads.embed.len() == params.embed.len()
        && grads.proj.len() == params.proj.len()
        && grads.bias.len() == params.bias.len()
        && state.m.embed.len() == params.embed.len()
        && state.m.proj.len() == params.proj.len()
        && state.m.bias.len() == params.bias.len();
    if !shapes_match {
        return Err(LmError::ShapeMismatch(
            "gradient or optimizer state does not match parameter shapes".to_string(),
        ));
    }
    if !grads.is_finite() {
        return Err(LmError::NonFiniteGradient);
    }

    state.step += 1;
    let hyper = state.hyper;
    let bias_correction1 = 1.0 - hyper.beta1.powi(state.step as i32);
    let bias_correction2 = 1.0 - hyper.beta2.powi(state.step as i32);

    let tensors = [
        (&mut params.embed, &grads.embed, &mut state.m.embed, &mut state.v.embed),
        (&mut params.proj, &grads.proj, &mut state.m.proj, &mut state.v.proj),
        (&mut params.bias, &grads.bias, &mut state.m.bias, &mut state.v.bias),
    ];
    for (param, grad, m, v) in tensors {
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
            let m_hat = m[i] / bias_correction1;
            let v_hat = v[i] / bias_correction2;
            let update = hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
            let decay = hyper.lr * hyper.weight_decay * param[i];
            param[i] -= update + decay;
        }
    }
    Ok(())
}
