//! Raw little-endian `f32` payloads with JSON sidecars.
//!
//! A payload `name.raw` is described by `name.json`. Volumes are stored
//! row-major `(D, H, W)`; flows channel-major `(3, D, H, W)`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::{FlowField, FlowMethod};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeSidecar {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub subject_id: String,
    pub t_years: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSidecar {
    pub dims: [usize; 4],
    pub method: FlowMethod,
    pub source_gap_years: Option<f64>,
    pub subject_id: String,
    pub t_curr: f64,
    pub t_prior: f64,
}

pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

fn write_payload<T: Scalar>(path: &Path, data: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data {
        let f = v.to_f64_lossless() as f32;
        bytes.extend_from_slice(&f.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_payload<T: Scalar>(path: &Path, expected: usize) -> Result<Vec<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let want = expected * 4;
    if bytes.len() != want {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("payload size mismatch: expected {want} bytes, found {}", bytes.len()),
        });
    }
    Ok(bytes.chunks_exact(4).map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect())
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format { path: path.into(), msg: e.to_string() })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path: path.into(), msg: format!("unreadable JSON: {e}") })
}

pub fn write_volume<T: Scalar>(path: &Path, volume: &Tensor<T>, subject_id: &str, t_years: f64) -> Result<()> {
    let dims = volume.dims::<3>("write_volume")?;
    write_payload(path, volume.data())?;
    let sidecar = VolumeSidecar { dims, spacing: [1.0; 3], subject_id: subject_id.to_string(), t_years };
    write_json(&sidecar_path(path), &sidecar)
}

pub fn read_volume<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    read_volume_with_sidecar(path).map(|(v, _)| v)
}

pub fn read_volume_with_sidecar<T: Scalar>(path: &Path) -> Result<(Tensor<T>, VolumeSidecar)> {
    let sidecar: VolumeSidecar = read_json(&sidecar_path(path))?;
    let data = read_payload(path, sidecar.dims.iter().product())?;
    Ok((Tensor::new(&sidecar.dims, data)?, sidecar))
}

pub fn write_flow<T: Scalar>(path: &Path, flow: &FlowField<T>, subject_id: &str, t_curr: f64, t_prior: f64) -> Result<()> {
    let dims = flow.vectors.dims::<4>("write_flow")?;
    write_payload(path, flow.vectors.data())?;
    let sidecar = FlowSidecar {
        dims,
        method: flow.method,
        source_gap_years: flow.source_gap_years,
        subject_id: subject_id.to_string(),
        t_curr,
        t_prior,
    };
    write_json(&sidecar_path(path), &sidecar)
}

pub fn read_flow<T: Scalar>(path: &Path) -> Result<(FlowField<T>, FlowSidecar)> {
    let sidecar: FlowSidecar = read_json(&sidecar_path(path))?;
    if sidecar.dims[0] != 3 {
        return Err(Error::Format { path: path.into(), msg: format!("flow dims {:?} must start with 3", sidecar.dims) });
    }
    let data = read_payload(path, sidecar.dims.iter().product())?;
    let mut flow = FlowField::new(Tensor::new(&sidecar.dims, data)?, sidecar.method)?;
    flow.source_gap_years = sidecar.source_gap_years;
    Ok((flow, sidecar))
}
