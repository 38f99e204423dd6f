//! Longitudinal change between two volumes as a dense displacement field.
//!
//! Two estimators produce the same kind of 3-channel voxel-unit field:
//! a variational optical flow ([`horn_schunck_flow`]) and a demons-style
//! registration ([`demons_register`]). [`scale_flow`] converts either into a
//! per-year rate by dividing by the inter-scan interval.

mod demons;
mod horn_schunck;
mod volume_ops;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub use demons::{demons_register, demons_register_traced, DemonsParams};
pub use horn_schunck::{horn_schunck_energy, horn_schunck_flow, horn_schunck_traced, HornSchunckParams};
pub use volume_ops::{gaussian_smooth, mse, normalize_intensity, sample_voxel, warp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMethod {
    OpticalFlow,
    Registration,
}

impl std::fmt::Display for FlowMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FlowMethod::OpticalFlow => "optical_flow",
            FlowMethod::Registration => "registration",
        })
    }
}

impl std::str::FromStr for FlowMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optical_flow" => Ok(FlowMethod::OpticalFlow),
            "registration" => Ok(FlowMethod::Registration),
            other => Err(Error::Config(format!("unknown flow method {other:?}"))),
        }
    }
}

/// Displacement field `[3, D, H, W]` in voxel units, components ordered
/// (depth, height, width).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T> {
    pub vectors: Tensor<T>,
    /// Interval (years) the displacement spans; `None` until paired with scan times.
    pub source_gap_years: Option<f64>,
    pub method: FlowMethod,
}

impl<T: Scalar> FlowField<T> {
    pub fn new(vectors: Tensor<T>, method: FlowMethod) -> Result<Self> {
        let [c, ..] = vectors.dims::<4>("flow field")?;
        if c != 3 {
            return Err(Error::shape("flow field", format!("expected 3 channels, got {c}")));
        }
        if !vectors.is_finite() {
            return Err(Error::NonFinite("flow field vectors".into()));
        }
        Ok(Self { vectors, source_gap_years: None, method })
    }

    pub fn zeros(spatial: [usize; 3], method: FlowMethod) -> Self {
        let [d, h, w] = spatial;
        Self { vectors: Tensor::zeros(&[3, d, h, w]), source_gap_years: None, method }
    }

    pub fn spatial(&self) -> [usize; 3] {
        let s = self.vectors.shape();
        [s[1], s[2], s[3]]
    }

    /// Per-voxel vector magnitude, `[D, H, W]`.
    pub fn magnitude(&self) -> Tensor<T> {
        let [d, h, w] = self.spatial();
        let n = d * h * w;
        let v = self.vectors.data();
        Tensor::from_fn(&[d, h, w], |i| (v[i] * v[i] + v[n + i] * v[n + i] + v[2 * n + i] * v[2 * n + i]).sqrt())
    }

    pub fn scaled_by(&self, c: T) -> Self {
        Self { vectors: self.vectors.scale(c), ..self.clone() }
    }
}

/// Divides the field by the scan interval, yielding a per-year displacement.
pub fn scale_flow<T: Scalar>(flow: &FlowField<T>, t_curr: f64, t_prior: f64) -> Result<FlowField<T>> {
    let gap = t_curr - t_prior;
    if !(gap > 0.0) || !gap.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-positive scan interval: t_curr {t_curr} - t_prior {t_prior} = {gap}"
        )));
    }
    let inv = T::of(1.0 / gap);
    Ok(FlowField { vectors: flow.vectors.scale(inv), source_gap_years: Some(1.0), method: flow.method })
}

pub(crate) fn volume_dims<T: Scalar>(v: &Tensor<T>, op: &'static str) -> Result<[usize; 3]> {
    v.dims::<3>(op)
}

pub(crate) fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<[usize; 3]> {
    let da = volume_dims(a, op)?;
    let db = volume_dims(b, op)?;
    if da != db {
        return Err(Error::shape(op, format!("volumes differ: {da:?} vs {db:?}")));
    }
    Ok(da)
}
