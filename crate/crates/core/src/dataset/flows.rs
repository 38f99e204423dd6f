use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{PairKind, PairRecord, PairingConfig};
use crate::error::{Error, Result};
use crate::flowfield::{
    demons_register, horn_schunck_flow, normalize_intensity, scale_flow, DemonsParams, FlowField, FlowMethod,
    HornSchunckParams,
};
use crate::io::{read_json, read_volume, write_flow, write_json};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const PAIR_INDEX_FILE: &str = "pairs.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub method: FlowMethod,
    pub horn_schunck: HornSchunckParams,
    pub demons: DemonsParams,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { method: FlowMethod::OpticalFlow, horn_schunck: HornSchunckParams::default(), demons: DemonsParams::default() }
    }
}

/// Per-year displacement between two scans.
///
/// Both volumes are normalized to zero mean and unit variance first. The
/// field `u` satisfies `current(p + u) ≈ prior(p)` for either method before
/// it is divided by the interval.
pub fn compute_pair_flow<T: Scalar>(
    prior: &Tensor<T>,
    current: &Tensor<T>,
    t_prior: f64,
    t_curr: f64,
    config: &FlowConfig,
) -> Result<FlowField<T>> {
    let p = normalize_intensity(prior);
    let c = normalize_intensity(current);
    let raw = match config.method {
        FlowMethod::OpticalFlow => horn_schunck_flow(&p, &c, &config.horn_schunck)?,
        FlowMethod::Registration => demons_register(&p, &c, &config.demons)?,
    };
    scale_flow(&raw, t_curr, t_prior)
}

/// Pairing plus precomputed flow locations for a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairIndex {
    pub pairing: PairingConfig,
    pub flow: FlowConfig,
    pub pairs: Vec<PairRecord>,
}

impl PairIndex {
    /// Writes the index; flow paths are stored relative to its directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut stored = self.clone();
        for p in &mut stored.pairs {
            if let Some(f) = &p.flow_path {
                p.flow_path = Some(f.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| f.clone()));
            }
        }
        write_json(path, &stored)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut index: PairIndex = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in &mut index.pairs {
            if let Some(f) = &p.flow_path {
                p.flow_path = Some(base.join(f));
            }
        }
        Ok(index)
    }
}

fn flow_file_name(pair: &PairRecord) -> String {
    format!("{}_t{}.raw", pair.current.subject_id, pair.current.t_years)
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Computes and writes one flow per pair that has a prior, then writes the
/// pair index to `out/pairs.json`. Pairs are processed in parallel; each
/// result depends only on its own inputs.
pub fn precompute_flows(pairs: &[PairRecord], pairing: &PairingConfig, config: &FlowConfig, out: &Path) -> Result<PairIndex> {
    let flows_dir = out.join("flows");
    fs::create_dir_all(&flows_dir).map_err(|e| Error::io(&flows_dir, e))?;
    let results: Vec<Result<PairRecord>> = pairs
        .par_iter()
        .map(|pair| {
            let mut pair = pair.clone();
            pair.current.volume_path = absolute(&pair.current.volume_path);
            let Some(prior) = pair.prior.as_mut() else {
                pair.flow_path = None;
                return Ok(pair);
            };
            prior.volume_path = absolute(&prior.volume_path);
            let t_prior = prior.t_years;
            let prior_vol = read_volume::<f32>(&prior.volume_path)?;
            debug_assert_ne!(pair.kind, PairKind::SingleEmpty);
            let current_vol = read_volume::<f32>(&pair.current.volume_path)?;
            let flow = compute_pair_flow(&prior_vol, &current_vol, t_prior, pair.current.t_years, config)?;
            let path = flows_dir.join(flow_file_name(&pair));
            write_flow(&path, &flow, &pair.current.subject_id, pair.current.t_years, t_prior)?;
            pair.flow_path = Some(path);
            Ok(pair)
        })
        .collect();
    let pairs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let index = PairIndex { pairing: *pairing, flow: config.clone(), pairs };
    index.save(&out.join(PAIR_INDEX_FILE))?;
    Ok(index)
}
