use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::volume_ops::gradient;
use crate::flowfield::{same_shape, FlowField, FlowMethod};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HornSchunckParams {
    /// Smoothness weight; the energy uses `alpha²`.
    pub alpha: f64,
    pub iters: usize,
    /// Over-relaxation factor of the in-place sweeps, in (0, 2).
    pub relaxation: f64,
}

impl Default for HornSchunckParams {
    fn default() -> Self {
        Self { alpha: 1.0, iters: 100, relaxation: 1.9 }
    }
}

impl HornSchunckParams {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.iters == 0 {
            return Err(Error::InvalidArgument("iters must be at least 1".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::InvalidArgument(format!("relaxation must lie in (0, 2), got {}", self.relaxation)));
        }
        Ok(())
    }
}

struct Problem<T> {
    dims: [usize; 3],
    grad: [Vec<T>; 3],
    temporal: Vec<T>,
}

fn setup<T: Scalar>(prior: &Tensor<T>, current: &Tensor<T>) -> Result<Problem<T>> {
    let dims = same_shape(prior, current, "horn_schunck_flow")?;
    let half = T::of(0.5);
    let mean: Vec<T> = prior.data().iter().zip(current.data()).map(|(&a, &b)| (a + b) * half).collect();
    let grad = gradient(&mean, dims);
    let temporal = current.data().iter().zip(prior.data()).map(|(&c, &p)| c - p).collect();
    Ok(Problem { dims, grad, temporal })
}

/// Brightness-constancy residual plus `alpha²` times the squared differences
/// across every 6-neighbour edge, summed over the three components.
fn energy<T: Scalar>(p: &Problem<T>, u: &[Vec<T>; 3], alpha: f64) -> f64 {
    let [d, h, w] = p.dims;
    let mut data_term = 0.0;
    for i in 0..p.temporal.len() {
        let r = p.grad[0][i] * u[0][i] + p.grad[1][i] * u[1][i] + p.grad[2][i] * u[2][i] + p.temporal[i];
        data_term += r.to_f64_lossless().powi(2);
    }
    let mut smooth = 0.0;
    let strides = [h * w, w, 1];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                let idx = [z, y, x];
                for a in 0..3 {
                    if idx[a] + 1 < p.dims[a] {
                        let j = i + strides[a];
                        for c in u {
                            smooth += (c[i] - c[j]).to_f64_lossless().powi(2);
                        }
                    }
                }
            }
        }
    }
    data_term + alpha * alpha * smooth
}

fn sweep<T: Scalar>(p: &Problem<T>, u: &mut [Vec<T>; 3], alpha2: T, omega: T) {
    let [d, h, w] = p.dims;
    let strides = [h * w, w, 1];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                let idx = [z, y, x];
                let mut count = 0usize;
                let mut avg = [T::zero(); 3];
                for a in 0..3 {
                    let s = strides[a];
                    if idx[a] > 0 {
                        count += 1;
                        for c in 0..3 {
                            avg[c] += u[c][i - s];
                        }
                    }
                    if idx[a] + 1 < p.dims[a] {
                        count += 1;
                        for c in 0..3 {
                            avg[c] += u[c][i + s];
                        }
                    }
                }
                let g = [p.grad[0][i], p.grad[1][i], p.grad[2][i]];
                let (lambda, mean) = if count == 0 {
                    (T::zero(), [T::zero(); 3])
                } else {
                    let n = T::of(count as f64);
                    (alpha2 * n, [avg[0] / n, avg[1] / n, avg[2] / n])
                };
                let gg = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
                let denom = lambda + gg;
                if denom <= T::zero() {
                    continue;
                }
                // Exact minimizer of the energy over this voxel's vector.
                let resid = (g[0] * mean[0] + g[1] * mean[1] + g[2] * mean[2] + p.temporal[i]) / denom;
                for c in 0..3 {
                    let target = mean[c] - g[c] * resid;
                    u[c][i] = u[c][i] + omega * (target - u[c][i]);
                }
            }
        }
    }
}

/// Horn–Schunck energy of a candidate flow between two volumes.
pub fn horn_schunck_energy<T: Scalar>(prior: &Tensor<T>, current: &Tensor<T>, flow: &FlowField<T>, alpha: f64) -> Result<f64> {
    let p = setup(prior, current)?;
    if flow.spatial() != p.dims {
        return Err(Error::shape("horn_schunck_energy", "flow and volumes differ"));
    }
    let n = p.temporal.len();
    let v = flow.vectors.data();
    let u = [v[..n].to_vec(), v[n..2 * n].to_vec(), v[2 * n..].to_vec()];
    Ok(energy(&p, &u, alpha))
}

/// Variational optical flow from `prior` to `current`.
///
/// The field `u` satisfies `current(p) ≈ prior(p - u(p))`, so content moving
/// towards larger indices yields positive components. The quadratic energy is
/// minimized with in-place over-relaxed block sweeps, each of which cannot
/// increase it.
pub fn horn_schunck_flow<T: Scalar>(prior: &Tensor<T>, current: &Tensor<T>, params: &HornSchunckParams) -> Result<FlowField<T>> {
    horn_schunck_traced(prior, current, params).map(|(f, _)| f)
}

/// As [`horn_schunck_flow`], also returning the energy before the first sweep
/// and after each sweep.
pub fn horn_schunck_traced<T: Scalar>(
    prior: &Tensor<T>,
    current: &Tensor<T>,
    params: &HornSchunckParams,
) -> Result<(FlowField<T>, Vec<f64>)> {
    params.validate()?;
    let p = setup(prior, current)?;
    let n = p.temporal.len();
    let mut u = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
    let alpha2 = T::of(params.alpha * params.alpha);
    let omega = T::of(params.relaxation);
    let mut trace = Vec::with_capacity(params.iters + 1);
    trace.push(energy(&p, &u, params.alpha));
    for _ in 0..params.iters {
        sweep(&p, &mut u, alpha2, omega);
        trace.push(energy(&p, &u, params.alpha));
    }
    let [d, h, w] = p.dims;
    let mut data = Vec::with_capacity(3 * n);
    for c in u {
        data.extend(c);
    }
    let flow = FlowField::new(Tensor::new(&[3, d, h, w], data)?, FlowMethod::OpticalFlow)?;
    Ok((flow, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(dims: [usize; 3], center: [f64; 3], sigma: f64) -> Tensor<f64> {
        let [d, h, w] = dims;
        Tensor::from_fn(&[d, h, w], |i| {
            let (z, y, x) = ((i / (h * w)) as f64, ((i / w) % h) as f64, (i % w) as f64);
            let r2 = (z - center[0]).powi(2) + (y - center[1]).powi(2) + (x - center[2]).powi(2);
            (-r2 / (2.0 * sigma * sigma)).exp()
        })
    }

    #[test]
    fn identical_volumes_give_zero_flow() {
        let v = blob([10, 10, 10], [4.5, 4.5, 4.5], 2.0);
        let f = horn_schunck_flow(&v, &v, &HornSchunckParams { iters: 10, ..Default::default() }).unwrap();
        assert!(f.vectors.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_params_and_shapes() {
        let a = Tensor::<f64>::zeros(&[4, 4, 4]);
        let b = Tensor::<f64>::zeros(&[4, 4, 5]);
        assert!(horn_schunck_flow(&a, &b, &HornSchunckParams::default()).is_err());
        assert!(horn_schunck_flow(&a, &a, &HornSchunckParams { alpha: 0.0, ..Default::default() }).is_err());
        assert!(horn_schunck_flow(&a, &a, &HornSchunckParams { iters: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn energy_never_increases() {
        let a = blob([12, 12, 12], [5.0, 5.5, 6.0], 2.5);
        let b = blob([12, 12, 12], [5.6, 5.2, 6.3], 2.7);
        let (_, trace) = horn_schunck_traced(&a, &b, &HornSchunckParams { iters: 30, ..Default::default() }).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
        assert!(trace.last().unwrap() < &trace[0]);
    }
}
