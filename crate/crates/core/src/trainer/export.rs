use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::numerics::Graph;
use crate::scalar::Scalar;
use crate::trainer::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDump {
    /// Sample location in `[-1, 1]` support coordinates, `(d, h, w)`.
    pub normalized: [f64; 3],
    /// Same location in support-grid voxels.
    pub support_voxel: [f64; 3],
    /// Support voxel mapped to the centre of its input-volume block.
    pub input_voxel: [f64; 3],
    /// Attention this point receives, summed over queries.
    pub received_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadDump {
    pub head: usize,
    pub points: Vec<PointDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDump {
    pub block: usize,
    pub heads: Vec<HeadDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub sample_id: String,
    pub score: f64,
    pub support_size: [usize; 3],
    /// Largest offset per axis in normalized units.
    pub offset_bound_normalized: [f64; 3],
    pub blocks: Vec<BlockDump>,
}

/// Deformed sample points and their received attention for one sample.
pub fn attention_dump<T: Scalar>(model: &Model<T>, sample: &Sample<T>) -> Result<AttentionDump> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let out = model.forward(&mut g, &p, sample)?;
    let n_s = model.config.embedding.support_size();
    let factor = model.config.embedding.downsample_factor_total as f64;
    let half_span = (n_s.max(2) - 1) as f64 / 2.0;
    let s = model.config.querying.offset_scale;
    let bound = s / half_span;

    let mut blocks = Vec::with_capacity(out.query.cross.len());
    for (b, trace) in out.query.cross.iter().enumerate() {
        let pts = g.value(trace.points);
        let n = pts.shape()[0];
        let coords: Vec<[f64; 3]> = (0..n)
            .map(|i| std::array::from_fn(|a| pts.data()[i * 3 + a].to_f64_lossless()))
            .collect();
        let mut heads = Vec::with_capacity(trace.weights.len());
        for (h, &w) in trace.weights.iter().enumerate() {
            let wt = g.value(w);
            let (nq, nk) = (wt.shape()[0], wt.shape()[1]);
            let mut mass = vec![0.0; nk];
            for q in 0..nq {
                for (k, m) in mass.iter_mut().enumerate() {
                    *m += wt.data()[q * nk + k].to_f64_lossless();
                }
            }
            let points = coords
                .iter()
                .zip(mass)
                .map(|(&u, received_mass)| {
                    let sv = u.map(|x| (x + 1.0) * half_span);
                    PointDump {
                        normalized: u,
                        support_voxel: sv,
                        input_voxel: sv.map(|x| (x + 0.5) * factor - 0.5),
                        received_mass,
                    }
                })
                .collect();
            heads.push(HeadDump { head: h, points });
        }
        blocks.push(BlockDump { block: b, heads });
    }
    let logit = g.value(out.logit).item().to_f64_lossless();
    Ok(AttentionDump {
        sample_id: sample.id.clone(),
        score: crate::numerics::sigmoid(logit),
        support_size: [n_s; 3],
        offset_bound_normalized: [bound; 3],
        blocks,
    })
}

/// Writes [`attention_dump`] as JSON.
pub fn export_attention<T: Scalar>(model: &Model<T>, sample: &Sample<T>, path: &Path) -> Result<AttentionDump> {
    let dump = attention_dump(model, sample)?;
    let text = serde_json::to_string_pretty(&dump).expect("dump serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(dump)
}
