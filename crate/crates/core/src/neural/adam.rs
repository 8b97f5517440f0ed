use crate::error::{Error, Result};

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias-corrected moment estimates. Moments are allocated lazily
/// the first time a parameter receives a gradient; parameters without a
/// gradient in a given step are left untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> Option<&Tensor> {
        self.first.get(index).and_then(Option::as_ref)
    }

    pub fn second_moment(&self, index: usize) -> Option<&Tensor> {
        self.second.get(index).and_then(Option::as_ref)
    }
}

/// One optimizer update of `params` in place.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} gradients for {} parameters", grads.len(), params.len()),
        ));
    }
    for (id, g) in grads.iter() {
        if g.shape() != params.get(id).shape() {
            return Err(Error::shape(
                "adam_step",
                format!("gradient for {} has shape {:?}", params.name(id), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", params.name(id))));
        }
    }
    if state.first.len() < params.len() {
        state.first.resize(params.len(), None);
        state.second.resize(params.len(), None);
    }

    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - state.beta1.powi(t);
    let correction2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);

    for (id, g) in grads.iter() {
        let [r, c] = g.shape();
        let m = state.first[id.index()].get_or_insert_with(|| Tensor::zeros(r, c));
        let v = state.second[id.index()].get_or_insert_with(|| Tensor::zeros(r, c));
        let p = params.get_mut(id);
        for (((pv, mv), vv), gv) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / correction1;
            let v_hat = *vv / correction2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("parameter {}", params.name(id))));
        }
    }
    Ok(())
}
