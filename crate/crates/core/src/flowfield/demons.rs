use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::volume_ops::{gaussian_smooth_slice, gradient, mse, warp};
use crate::flowfield::{same_shape, FlowField, FlowMethod};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemonsParams {
    pub iters: usize,
    /// Gaussian regularization of the whole field after each update; 0 disables it.
    pub smooth_sigma: f64,
    /// Step halvings tried before an iteration is declared converged.
    pub max_backtracks: usize,
}

impl Default for DemonsParams {
    fn default() -> Self {
        Self { iters: 50, smooth_sigma: 1.0, max_backtracks: 6 }
    }
}

/// Demons registration: finds `v` such that `moving(p + v(p)) ≈ fixed(p)`.
pub fn demons_register<T: Scalar>(fixed: &Tensor<T>, moving: &Tensor<T>, params: &DemonsParams) -> Result<FlowField<T>> {
    demons_register_traced(fixed, moving, params).map(|(f, _)| f)
}

/// As [`demons_register`], also returning the mean-squared difference after
/// warping, before the first iteration and after each one.
///
/// Each iteration takes the symmetric-gradient demons force, smooths the
/// updated field and accepts it only if the warped error does not grow,
/// halving the step otherwise.
pub fn demons_register_traced<T: Scalar>(
    fixed: &Tensor<T>,
    moving: &Tensor<T>,
    params: &DemonsParams,
) -> Result<(FlowField<T>, Vec<f64>)> {
    let dims = same_shape(fixed, moving, "demons_register")?;
    if !(params.smooth_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("smooth_sigma must be non-negative, got {}", params.smooth_sigma)));
    }
    let n = fixed.numel();
    let mut field = FlowField::zeros(dims, FlowMethod::Registration);
    let mut current = mse(&warp(moving, &field)?, fixed)?;
    let mut trace = vec![current];
    let fixed_grad = gradient(fixed.data(), dims);
    let half = T::of(0.5);
    let tiny = T::of(1e-9);

    for _ in 0..params.iters {
        let warped = warp(moving, &field)?;
        let warped_grad = gradient(warped.data(), dims);
        let mut force = vec![T::zero(); 3 * n];
        for i in 0..n {
            let diff = warped.data()[i] - fixed.data()[i];
            let g = [
                (warped_grad[0][i] + fixed_grad[0][i]) * half,
                (warped_grad[1][i] + fixed_grad[1][i]) * half,
                (warped_grad[2][i] + fixed_grad[2][i]) * half,
            ];
            let denom = g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + diff * diff;
            if denom <= tiny {
                continue;
            }
            for a in 0..3 {
                force[a * n + i] = -diff * g[a] / denom;
            }
        }

        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..=params.max_backtracks {
            let mut cand = field.vectors.clone();
            for (c, &f) in cand.data_mut().iter_mut().zip(&force) {
                *c += step * f;
            }
            for a in 0..3 {
                gaussian_smooth_slice(&mut cand.data_mut()[a * n..(a + 1) * n], dims, params.smooth_sigma);
            }
            let cand = FlowField { vectors: cand, source_gap_years: None, method: FlowMethod::Registration };
            let err = mse(&warp(moving, &cand)?, fixed)?;
            if err <= current {
                accepted = Some((cand, err));
                break;
            }
            step = step * half;
        }
        match accepted {
            Some((cand, err)) => {
                field = cand;
                current = err;
            }
            None => {}
        }
        trace.push(current);
    }
    if !field.vectors.is_finite() {
        return Err(Error::NonFinite("demons displacement field".into()));
    }
    Ok((field, trace))
}
