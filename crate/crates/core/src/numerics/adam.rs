use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 5e-5, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter first and second moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step_count: u64,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, hyper: AdamHyper) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { first_moment: zeros(), second_moment: zeros(), step_count: 0, hyper }
    }
}

/// One bias-corrected Adam update.
///
/// All gradients are validated before any parameter changes, so a rejected
/// step leaves parameters and moments untouched.
pub fn adam_step<T: Scalar>(params: &mut ParamStore<T>, grads: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameters, {} gradients, {} moments", params.len(), grads.len(), state.first_moment.len()),
        ));
    }
    for (i, (p, g)) in params.tensors().iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("gradient {:?} for parameter {} {:?}", g.shape(), params.names()[i], p.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {}", params.names()[i])));
        }
    }

    state.step_count += 1;
    let h = state.hyper;
    let t = state.step_count as i32;
    let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
    let bc1 = T::of(1.0 - h.beta1.powi(t));
    let bc2 = T::of(1.0 - h.beta2.powi(t));
    let (lr, eps) = (T::of(h.lr), T::of(h.epsilon));
    let one = T::one();

    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
