//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub eps: f64,
    /// Denominator floor of the relative error.
    pub rel_floor: f64,
    /// Check at most this many elements per input (all when `None`).
    pub max_elements_per_input: Option<usize>,
    /// Relative disagreement between one-sided differences that marks a kink.
    pub kink_threshold: f64,
    /// Tolerance used when matching the analytic value to a one-sided slope at a kink.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            rel_floor: 1e-6,
            max_elements_per_input: None,
            kink_threshold: 1e-2,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

/// Element located at a non-differentiable point.
#[derive(Debug, Clone, PartialEq)]
pub struct Kink {
    pub input: usize,
    pub element: usize,
    pub left_slope: f64,
    pub right_slope: f64,
    pub analytic: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input, element) of the worst smooth element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Points where one-sided slopes disagree. The analytic value matched one
    /// side, so these are excluded from `max_rel_error` but listed here.
    pub kinks: Vec<Kink>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` builds the scalar output on a fresh graph from the supplied input
/// variables. Inputs are treated as trainable regardless of their flag.
/// An element whose central difference disagrees with the analytic value is
/// classified as a kink only when its one-sided slopes disagree and the
/// analytic value matches one of them; otherwise it counts towards
/// `max_rel_error`.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if !(1e-8..=1e-2).contains(&opts.eps) {
        return Err(Error::InvalidArgument(format!("grad_check eps {} out of range", opts.eps)));
    }
    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out);
        if v.numel() != 1 {
            return Err(Error::shape("grad_check", format!("function output has shape {:?}", v.shape())));
        }
        Ok(v.item().to_f64_lossless())
    };

    let analytic: Vec<Tensor<T>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let grads = g.backward(out)?;
        vars.iter().map(|&v| grads.wrt(&g, v)).collect()
    };
    let center = eval(inputs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0, kinks: Vec::new() };
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    let h = opts.eps;

    for (ii, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let elements: Vec<usize> = match opts.max_elements_per_input {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for e in elements {
            let orig = input.data()[e];
            work[ii].data_mut()[e] = orig + T::of(h);
            let plus = eval(&work)?;
            work[ii].data_mut()[e] = orig - T::of(h);
            let minus = eval(&work)?;
            work[ii].data_mut()[e] = orig;

            let a = analytic[ii].data()[e].to_f64_lossless();
            let central = (plus - minus) / (2.0 * h);
            let right = (plus - center) / h;
            let left = (center - minus) / h;
            report.checked += 1;

            let err = rel_err(a, central, opts.rel_floor);
            if err > opts.tolerance && rel_err(left, right, opts.rel_floor) > opts.kink_threshold {
                let matches_side = rel_err(a, left, opts.rel_floor) < opts.tolerance
                    || rel_err(a, right, opts.rel_floor) < opts.tolerance;
                if matches_side {
                    report.kinks.push(Kink { input: ii, element: e, left_slope: left, right_slope: right, analytic: a });
                    continue;
                }
            }
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((ii, e));
            }
        }
    }
    Ok(report)
}
