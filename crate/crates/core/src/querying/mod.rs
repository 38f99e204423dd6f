//! Learnable queries refined by stacked blocks of self-attention,
//! deformable cross-attention against the support features, and an FFN,
//! each as a pre-norm residual.

mod attention;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{BoundParams, Graph, ParamId, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

pub use attention::{
    deformable_cross_attention, offset_net, self_attention, CrossAttentionIds, CrossAttentionTrace, LinearIds,
    OffsetNetIds, SelfAttentionIds,
};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryingConfig {
    /// Number of querying blocks (L).
    pub blocks: usize,
    /// Reference lattice; its product is the query count.
    pub grid: [usize; 3],
    /// Query width.
    pub d: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    /// Offset amplitude in support-grid voxels.
    pub offset_scale: f64,
    pub query_init_std: f64,
}

impl Default for QueryingConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl QueryingConfig {
    pub fn desk() -> Self {
        Self { blocks: 2, grid: [3, 3, 3], d: 32, heads: 4, ffn_hidden: 128, offset_scale: 2.0, query_init_std: 0.1 }
    }

    pub fn full_scale() -> Self {
        Self { blocks: 6, grid: [5, 5, 5], d: 512, heads: 8, ffn_hidden: 2048, offset_scale: 2.0, query_init_std: 0.1 }
    }

    pub fn num_queries(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::Config("querying needs at least one block".into()));
        }
        if self.grid.contains(&0) {
            return Err(Error::Config(format!("grid extents must be positive, got {:?}", self.grid)));
        }
        if self.heads == 0 || self.d == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!("width {} must be divisible by {} heads", self.d, self.heads)));
        }
        if self.ffn_hidden == 0 {
            return Err(Error::Config("ffn_hidden must be positive".into()));
        }
        if !(self.offset_scale > 0.0) {
            return Err(Error::Config(format!("offset_scale must be positive, got {}", self.offset_scale)));
        }
        if !(self.query_init_std >= 0.0) {
            return Err(Error::Config("query_init_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Uniform lattice `[N, 3]` mapped to `[-1, 1]` per axis, depth-major order.
/// Single-extent axes sit at 0.
pub fn reference_grid<T: Scalar>(grid: [usize; 3]) -> Tensor<T> {
    let coord = |i: usize, n: usize| if n == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 };
    let [d, h, w] = grid;
    let mut data = Vec::with_capacity(d * h * w * 3);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                data.extend([T::of(coord(z, d)), T::of(coord(y, h)), T::of(coord(x, w))]);
            }
        }
    }
    Tensor::new(&[d * h * w, 3], data).expect("grid size")
}

#[derive(Debug, Clone, Copy)]
pub struct NormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormIds {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        Self { gamma: store.ones(format!("{name}.gamma"), &[d]), beta: store.zeros(format!("{name}.beta"), &[d]) }
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        g.layer_norm(x, p.get(self.gamma), p.get(self.beta), T::of(LN_EPS))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BlockIds {
    pub norm_sa: NormIds,
    pub sa: SelfAttentionIds,
    pub norm_ca: NormIds,
    pub ca: CrossAttentionIds,
    pub norm_ffn: NormIds,
    pub ffn_in: LinearIds,
    pub ffn_out: LinearIds,
}

impl BlockIds {
    /// Output projections of the three sublayers.
    pub fn residual_projections(&self) -> [LinearIds; 3] {
        [self.sa.out, self.ca.out, self.ffn_out]
    }
}

/// Parameter handles of the querying module.
#[derive(Debug, Clone)]
pub struct Querying {
    pub config: QueryingConfig,
    /// Channel count of the support features attended over.
    pub support_channels: usize,
    pub q_init: ParamId,
    pub blocks: Vec<BlockIds>,
}

#[derive(Debug, Clone)]
pub struct QueryOutput {
    /// `[N_Q, d]`
    pub queries: Var,
    pub cross: Vec<CrossAttentionTrace>,
}

impl Querying {
    pub fn new<T: Scalar, R: Rng>(
        config: QueryingConfig,
        support_channels: usize,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let q_init = store.normal("query.init", &[config.num_queries(), d], config.query_init_std, rng);
        let blocks = (0..config.blocks)
            .map(|b| {
                let name = format!("query.block{b}");
                BlockIds {
                    norm_sa: NormIds::new(store, &format!("{name}.norm_sa"), d),
                    sa: SelfAttentionIds::new(store, &format!("{name}.self_attn"), d, rng),
                    norm_ca: NormIds::new(store, &format!("{name}.norm_ca"), d),
                    ca: CrossAttentionIds::new(store, &format!("{name}.cross_attn"), d, support_channels, rng),
                    norm_ffn: NormIds::new(store, &format!("{name}.norm_ffn"), d),
                    ffn_in: LinearIds::new(store, &format!("{name}.ffn_in"), d, config.ffn_hidden, rng),
                    ffn_out: LinearIds::new(store, &format!("{name}.ffn_out"), config.ffn_hidden, d, rng),
                }
            })
            .collect();
        Ok(Self { config, support_channels, q_init, blocks })
    }

    fn check_support<T: Scalar>(&self, g: &Graph<T>, support: Var) -> Result<()> {
        let s = g.shape(support);
        if s.len() != 4 || s[0] != self.support_channels {
            return Err(Error::shape(
                "querying",
                format!("support features must be [{}, D, H, W], got {s:?}", self.support_channels),
            ));
        }
        Ok(())
    }

    /// One block: `x += SA(LN x)`, `x += DCA(LN x, F_S)`, `x += FFN(LN x)`.
    pub fn block<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        index: usize,
        x: Var,
        support: Var,
        reference: Var,
    ) -> Result<(Var, CrossAttentionTrace)> {
        let b = &self.blocks[index];
        let heads = self.config.heads;
        let n = b.norm_sa.apply(g, p, x)?;
        let sa = self_attention(g, p, &b.sa, n, heads)?;
        let x = g.add(x, sa)?;

        let n = b.norm_ca.apply(g, p, x)?;
        let trace = deformable_cross_attention(g, p, &b.ca, n, support, reference, heads, self.config.offset_scale)?;
        let x = g.add(x, trace.output)?;

        let n = b.norm_ffn.apply(g, p, x)?;
        let h = b.ffn_in.apply(g, p, n)?;
        let h = g.relu(h)?;
        let f = b.ffn_out.apply(g, p, h)?;
        Ok((g.add(x, f)?, trace))
    }

    /// Runs all blocks from the learned initial queries over position-encoded
    /// support features `[C, D, H, W]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, support: Var) -> Result<QueryOutput> {
        self.forward_from(g, p, p.get(self.q_init), support)
    }

    /// As [`Self::forward`] starting from explicit queries `[N_Q, d]`.
    pub fn forward_from<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, q0: Var, support: Var) -> Result<QueryOutput> {
        self.check_support(g, support)?;
        let want = [self.config.num_queries(), self.config.d];
        if g.shape(q0) != want {
            return Err(Error::shape("querying", format!("queries must be {want:?}, got {:?}", g.shape(q0))));
        }
        let reference = g.constant(reference_grid(self.config.grid));
        let mut x = q0;
        let mut cross = Vec::with_capacity(self.blocks.len());
        for i in 0..self.blocks.len() {
            let (next, trace) = self.block(g, p, i, x, support, reference)?;
            x = next;
            cross.push(trace);
        }
        Ok(QueryOutput { queries: x, cross })
    }
}
