use rand::Rng;

use crate::error::Result;
use crate::numerics::{BoundParams, Graph, ParamId, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

/// Weight `[din, dout]` and bias `[dout]` of an affine map.
#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearIds {
    pub(crate) fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.normal(format!("{name}.weight"), &[din, dout], (1.0 / din as f64).sqrt(), rng);
        let bias = store.zeros(format!("{name}.bias"), &[dout]);
        Self { weight, bias }
    }

    pub(crate) fn zeros<T: Scalar>(store: &mut ParamStore<T>, name: &str, din: usize, dout: usize) -> Self {
        let weight = store.zeros(format!("{name}.weight"), &[din, dout]);
        let bias = store.zeros(format!("{name}.bias"), &[dout]);
        Self { weight, bias }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        g.linear(x, p.get(self.weight), p.get(self.bias))
    }
}

/// Scaled dot-product attention per head. `q [M, d]`, `k, v [N, d]`.
/// Returns the concatenated head outputs `[M, d]` and each head's weights `[M, N]`.
pub(crate) fn multi_head<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var, heads: usize) -> Result<(Var, Vec<Var>)> {
    let d = g.shape(q)[1];
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice(q, 1, h * dh, dh)?;
        let kh = g.slice(k, 1, h * dh, dh)?;
        let vh = g.slice(v, 1, h * dh, dh)?;
        let logits = g.matmul(qh, kh, true)?;
        let logits = g.scale(logits, scale)?;
        let a = g.softmax(logits, 1)?;
        outs.push(g.matmul(a, vh, false)?);
        weights.push(a);
    }
    let out = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    Ok((out, weights))
}

#[derive(Debug, Clone, Copy)]
pub struct SelfAttentionIds {
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub out: LinearIds,
}

impl SelfAttentionIds {
    pub(crate) fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, d: usize, rng: &mut R) -> Self {
        Self {
            q: LinearIds::new(store, &format!("{name}.q"), d, d, rng),
            k: LinearIds::new(store, &format!("{name}.k"), d, d, rng),
            v: LinearIds::new(store, &format!("{name}.v"), d, d, rng),
            out: LinearIds::new(store, &format!("{name}.out"), d, d, rng),
        }
    }
}

/// Multi-head self-attention over the rows of `x [N, d]`.
pub fn self_attention<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    ids: &SelfAttentionIds,
    x: Var,
    heads: usize,
) -> Result<Var> {
    let q = ids.q.apply(g, p, x)?;
    let k = ids.k.apply(g, p, x)?;
    let v = ids.v.apply(g, p, x)?;
    let (o, _) = multi_head(g, q, k, v, heads)?;
    ids.out.apply(g, p, o)
}

/// Two-layer offset predictor; the second layer starts at zero.
#[derive(Debug, Clone, Copy)]
pub struct OffsetNetIds {
    pub hidden: LinearIds,
    pub out: LinearIds,
}

impl OffsetNetIds {
    pub(crate) fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, d: usize, rng: &mut R) -> Self {
        let h = (d / 2).max(1);
        Self {
            hidden: LinearIds::new(store, &format!("{name}.hidden"), d, h, rng),
            out: LinearIds::zeros(store, &format!("{name}.out"), h, 3),
        }
    }
}

/// `Δp = s · tanh(out(tanh(hidden(q))))`, in support-grid voxel units.
pub fn offset_net<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, ids: &OffsetNetIds, q: Var, s: f64) -> Result<Var> {
    let h = ids.hidden.apply(g, p, q)?;
    let h = g.tanh(h)?;
    let raw = ids.out.apply(g, p, h)?;
    let t = g.tanh(raw)?;
    g.scale(t, T::of(s))
}

#[derive(Debug, Clone, Copy)]
pub struct CrossAttentionIds {
    pub q: LinearIds,
    pub offset: OffsetNetIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub out: LinearIds,
}

impl CrossAttentionIds {
    pub(crate) fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        support_channels: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            q: LinearIds::new(store, &format!("{name}.q"), d, d, rng),
            offset: OffsetNetIds::new(store, &format!("{name}.offset"), d, rng),
            k: LinearIds::new(store, &format!("{name}.k"), support_channels, d, rng),
            v: LinearIds::new(store, &format!("{name}.v"), support_channels, d, rng),
            out: LinearIds::new(store, &format!("{name}.out"), d, d, rng),
        }
    }
}

/// Graph handles produced by one deformable cross-attention call.
#[derive(Debug, Clone)]
pub struct CrossAttentionTrace {
    pub output: Var,
    /// Offsets `[N, 3]` in support-grid voxels.
    pub offsets: Var,
    /// Deformed sample points `[N, 3]`, normalized coordinates.
    pub points: Var,
    /// Per-head attention weights `[N_Q, N]`.
    pub weights: Vec<Var>,
}

/// Diagonal map from support-voxel offsets to normalized offsets.
pub(crate) fn voxel_to_normalized<T: Scalar>(support: [usize; 3]) -> Tensor<T> {
    Tensor::from_fn(&[3, 3], |i| {
        let (r, c) = (i / 3, i % 3);
        if r == c {
            T::of(2.0 / (support[r].max(2) - 1) as f64)
        } else {
            T::zero()
        }
    })
}

/// Queries `x [N_Q, d]` attend over features of `support [C, D, H, W]`
/// sampled at `reference [N, 3] + Δp`. Every query sees all N sampled keys.
#[allow(clippy::too_many_arguments)]
pub fn deformable_cross_attention<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    ids: &CrossAttentionIds,
    x: Var,
    support: Var,
    reference: Var,
    heads: usize,
    offset_scale: f64,
) -> Result<CrossAttentionTrace> {
    let fs = g.shape(support).to_vec();
    let q = ids.q.apply(g, p, x)?;
    let offsets = offset_net(g, p, &ids.offset, q, offset_scale)?;
    let to_norm = g.constant(voxel_to_normalized([fs[1], fs[2], fs[3]]));
    let shift = g.matmul(offsets, to_norm, false)?;
    let points = g.add(reference, shift)?;
    let sampled = g.trilinear_sample(support, points)?;
    let k = ids.k.apply(g, p, sampled)?;
    let v = ids.v.apply(g, p, sampled)?;
    let (o, weights) = multi_head(g, q, k, v, heads)?;
    let output = ids.out.apply(g, p, o)?;
    Ok(CrossAttentionTrace { output, offsets, points, weights })
}
