use rayon::prelude::*;

use crate::dataset::PairRecord;
use crate::error::Result;
use crate::flowfield::normalize_intensity;
use crate::io::{read_flow, read_volume};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Model-ready inputs for one pair. Images are intensity-normalized and
/// carry a leading channel axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub subject_id: String,
    pub label: u8,
    pub t_curr: f64,
    /// `[1, D, H, W]`
    pub image: Tensor<T>,
    /// `[1, D, H, W]` prior image and its time.
    pub prior: Option<(Tensor<T>, f64)>,
    /// `[3, D, H, W]` per-year flow.
    pub flow: Option<Tensor<T>>,
}

fn with_channel<T: Scalar>(v: Tensor<T>) -> Result<Tensor<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(v.shape());
    v.reshape(&shape)
}

pub fn load_sample<T: Scalar>(pair: &PairRecord) -> Result<Sample<T>> {
    let image = with_channel(normalize_intensity(&read_volume::<f32>(&pair.current.volume_path)?.cast::<T>()))?;
    let prior = match &pair.prior {
        Some(p) => Some((with_channel(normalize_intensity(&read_volume::<f32>(&p.volume_path)?.cast::<T>()))?, p.t_years)),
        None => None,
    };
    let flow = match &pair.flow_path {
        Some(path) => Some(read_flow::<f32>(path)?.0.vectors.cast::<T>()),
        None => None,
    };
    Ok(Sample {
        id: pair.id(),
        subject_id: pair.current.subject_id.clone(),
        label: pair.current.label,
        t_curr: pair.current.t_years,
        image,
        prior,
        flow,
    })
}

/// Loads every pair in order.
pub fn load_samples<T: Scalar>(pairs: &[PairRecord]) -> Result<Vec<Sample<T>>> {
    pairs.par_iter().map(load_sample).collect()
}
