use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid Adam config {self:?}")))
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn for_params(params: &[&Tensor]) -> Self {
        AdamState {
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    config.validate()?;
    if state.first_moment.is_empty() && !params.is_empty() {
        let refs: Vec<&Tensor> = params.iter().map(|p| &**p).collect();
        *state = AdamState { step: state.step, ..AdamState::for_params(&refs) };
    }
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::shape(
            format!("{} parameter tensors", params.len()),
            format!("{} gradients / {} moments", grads.len(), state.first_moment.len()),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        p.check_same_shape(g)?;
        p.check_same_shape(m)?;
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let (b1, b2) = (config.beta1, config.beta2);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let mhat = *mv / c1;
            let vhat = *vv / c2;
            *pv -= config.learning_rate * mhat / (vhat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}
