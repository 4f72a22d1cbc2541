use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::net::{Gradients, Network, ParamId};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u32,
}

impl<T: Scalar> AdamMoments<T> {
    pub fn new(len: usize) -> Self {
        AdamMoments {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update:
/// `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g^2`,
/// `p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamMoments<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(Error::ShapeMismatch(format!(
            "params {}, grads {}, moments {}/{}",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let c1 = T::one() / (T::one() - T::lit(cfg.beta1.powi(t)));
    let c2 = T::one() / (T::one() - T::lit(cfg.beta2.powi(t)));
    let lr = T::lit(lr);
    let eps = T::lit(cfg.epsilon);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let m_hat = state.m[i] * c1;
        let v_hat = state.v[i] * c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over the trainable tensors of a network.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    moments: BTreeMap<ParamId, AdamMoments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            moments: BTreeMap::new(),
        }
    }

    /// Updates every tensor that has a gradient. Frozen tensors never receive
    /// gradients and are left untouched.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        for entry in &grads.entries {
            if !net.params()[entry.param].trainable {
                continue;
            }
            let state = self
                .moments
                .entry(entry.param)
                .or_insert_with(|| AdamMoments::new(entry.grad.len()));
            adam_step(
                net.param_data_mut(entry.param),
                entry.grad.data(),
                state,
                lr,
                &self.config,
            )?;
        }
        Ok(())
    }
}
