//! Support features from an (image, flow) pair: channel adapters feeding a
//! single, weight-shared 3D CNN whose outputs are concatenated channelwise.

mod position;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{BoundParams, Graph, ParamId, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

pub use position::{positional_encoding, positional_encoding_prefix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    /// Current image plus precomputed flow.
    Flow,
    /// Current and prior image, each tagged with a learned temporal vector.
    PriorImage,
    /// Current image only; the second half of the support features is zero.
    SingleImage,
}

impl std::fmt::Display for EmbeddingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingMode::Flow => "flow",
            EmbeddingMode::PriorImage => "prior_image",
            EmbeddingMode::SingleImage => "single_image",
        })
    }
}

impl std::str::FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flow" => Ok(Self::Flow),
            "prior_image" => Ok(Self::PriorImage),
            "single_image" => Ok(Self::SingleImage),
            other => Err(Error::Config(format!("unknown embedding mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Cube edge of the input volumes.
    pub input_size: usize,
    /// Width of each stride-2 stage; the adapters emit `stage_channels[0]`.
    pub stage_channels: Vec<usize>,
    pub downsample_factor_total: usize,
    /// Channels produced by the backbone per branch (C_S).
    pub support_channels: usize,
    /// Odd adapter kernel edge.
    pub adapter_kernel: usize,
    pub mode: EmbeddingMode,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EmbeddingConfig {
    /// Small model for desk-scale experiments on 32³ volumes.
    pub fn desk() -> Self {
        Self {
            input_size: 32,
            stage_channels: vec![4, 8, 16],
            downsample_factor_total: 8,
            support_channels: 24,
            adapter_kernel: 1,
            mode: EmbeddingMode::Flow,
        }
    }

    /// Full-scale shape preset: 224³ input reduced 32-fold to 7³.
    pub fn full_scale() -> Self {
        Self {
            input_size: 224,
            stage_channels: vec![64, 128, 256, 512, 1024],
            downsample_factor_total: 32,
            support_channels: 1024,
            adapter_kernel: 3,
            mode: EmbeddingMode::Flow,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.stage_channels.len();
        if stages == 0 || self.stage_channels.contains(&0) || self.support_channels == 0 {
            return Err(Error::Config("stage widths and support_channels must be positive".into()));
        }
        if self.downsample_factor_total != 1 << stages {
            return Err(Error::Config(format!(
                "downsample_factor_total {} must equal 2^{stages} for {stages} stride-2 stages",
                self.downsample_factor_total
            )));
        }
        if self.input_size == 0 || self.input_size % self.downsample_factor_total != 0 {
            return Err(Error::Config(format!(
                "input_size {} is not divisible by downsample_factor_total {}",
                self.input_size, self.downsample_factor_total
            )));
        }
        if self.adapter_kernel % 2 == 0 {
            return Err(Error::Config(format!("adapter_kernel must be odd, got {}", self.adapter_kernel)));
        }
        Ok(())
    }

    /// Support grid edge `input_size / downsample_factor_total`.
    pub fn support_size(&self) -> usize {
        self.input_size / self.downsample_factor_total
    }

    /// Channels of the fused support features (two branches).
    pub fn fused_channels(&self) -> usize {
        2 * self.support_channels
    }

    fn growth(width: usize) -> usize {
        (width / 2).max(1)
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Stage {
    down: ConvIds,
    dense: ConvIds,
}

/// Parameter handles of the embedding module.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub config: EmbeddingConfig,
    adapt_image: ConvIds,
    adapt_flow: ConvIds,
    stages: Vec<Stage>,
    head: ConvIds,
    missing: Option<ParamId>,
    temporal: Option<ParamId>,
}

/// Fused support features inside a graph.
#[derive(Debug, Clone, Copy)]
pub struct SupportFeatures {
    /// `[2·C_S, D_S, H_S, W_S]` concatenated branch features.
    pub values: Var,
    /// Fixed encoding of the same shape as `values`.
    pub position_encoding: Var,
    /// Second-branch input was unavailable.
    pub flow_was_absent: bool,
}

impl SupportFeatures {
    /// `values + position_encoding`, the input to the querying module.
    pub fn encoded<T: Scalar>(&self, g: &mut Graph<T>) -> Result<Var> {
        g.add(self.values, self.position_encoding)
    }
}

fn conv_params<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
    rng: &mut R,
) -> ConvIds {
    let fan_in = (cin * k * k * k) as f64;
    let weight = store.normal(format!("{name}.weight"), &[cout, cin, k, k, k], (2.0 / fan_in).sqrt(), rng);
    let bias = store.zeros(format!("{name}.bias"), &[cout]);
    ConvIds { weight, bias }
}

impl Embedding {
    pub fn new<T: Scalar, R: Rng>(config: EmbeddingConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c0 = config.stage_channels[0];
        let k = config.adapter_kernel;
        let adapt_image = conv_params(store, "embed.adapt_image", c0, 1, k, rng);
        let adapt_flow = conv_params(store, "embed.adapt_flow", c0, 3, k, rng);
        let mut stages = Vec::new();
        let mut cin = c0;
        for (i, &w) in config.stage_channels.iter().enumerate() {
            let down = conv_params(store, &format!("embed.backbone.stage{i}.down"), w, cin, 3, rng);
            let growth = EmbeddingConfig::growth(w);
            let dense = conv_params(store, &format!("embed.backbone.stage{i}.dense"), growth, w, 3, rng);
            stages.push(Stage { down, dense });
            cin = w + growth;
        }
        let head = conv_params(store, "embed.backbone.head", config.support_channels, cin, 1, rng);
        let missing = match config.mode {
            EmbeddingMode::Flow | EmbeddingMode::PriorImage => {
                Some(store.zeros("embed.missing", &[config.support_channels]))
            }
            EmbeddingMode::SingleImage => None,
        };
        let temporal = match config.mode {
            EmbeddingMode::PriorImage => Some(store.normal("embed.temporal", &[2, config.support_channels], 0.1, rng)),
            _ => None,
        };
        Ok(Self { config, adapt_image, adapt_flow, stages, head, missing, temporal })
    }

    fn check_input<T: Scalar>(&self, g: &Graph<T>, x: Var, channels: usize, op: &'static str) -> Result<()> {
        let n = self.config.input_size;
        let want = [channels, n, n, n];
        if g.shape(x) != want {
            return Err(Error::shape(op, format!("expected {want:?}, got {:?}", g.shape(x))));
        }
        Ok(())
    }

    fn conv<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, ids: ConvIds, x: Var, stride: usize, pad: usize) -> Result<Var> {
        g.conv3d(x, p.get(ids.weight), p.get(ids.bias), stride, pad)
    }

    /// Image adapter: `[1, N, N, N] -> [C0, N, N, N]`.
    pub fn adapt_image<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, image: Var) -> Result<Var> {
        self.check_input(g, image, 1, "adapt_image")?;
        Self::conv(g, p, self.adapt_image, image, 1, self.config.adapter_kernel / 2)
    }

    /// Flow adapter: `[3, N, N, N] -> [C0, N, N, N]`.
    pub fn adapt_flow<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, flow: Var) -> Result<Var> {
        self.check_input(g, flow, 3, "adapt_flow")?;
        Self::conv(g, p, self.adapt_flow, flow, 1, self.config.adapter_kernel / 2)
    }

    /// Shared backbone: `[C0, N, N, N] -> [C_S, N/f, N/f, N/f]`.
    pub fn backbone<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, adapted: Var) -> Result<Var> {
        self.check_input(g, adapted, self.config.stage_channels[0], "backbone_forward")?;
        let mut h = adapted;
        for stage in &self.stages {
            let down = Self::conv(g, p, stage.down, h, 2, 1)?;
            let down = g.relu(down)?;
            let grown = Self::conv(g, p, stage.dense, down, 1, 1)?;
            let grown = g.relu(grown)?;
            h = g.concat(&[down, grown], 0)?;
        }
        let out = Self::conv(g, p, self.head, h, 1, 0)?;
        g.relu(out)
    }

    fn replicate<T: Scalar>(&self, g: &mut Graph<T>, vector: Var) -> Result<Var> {
        let s = self.config.support_size();
        g.channel_broadcast(vector, &[s, s, s])
    }

    fn zero_half<T: Scalar>(&self, g: &mut Graph<T>) -> Var {
        let s = self.config.support_size();
        g.constant(Tensor::zeros(&[self.config.support_channels, s, s, s]))
    }

    fn finish<T: Scalar>(&self, g: &mut Graph<T>, a: Var, b: Var, flow_was_absent: bool) -> Result<SupportFeatures> {
        let values = g.concat(&[a, b], 0)?;
        let s = self.config.support_size();
        let pe = positional_encoding_prefix::<T>([s, s, s], self.config.fused_channels());
        let position_encoding = g.constant(pe);
        Ok(SupportFeatures { values, position_encoding, flow_was_absent })
    }

    /// `concat(backbone(f_a1(image)), backbone(f_a2(flow)) or replicated learned vector)`.
    /// In single-image mode the second half is zero.
    pub fn embed_pair<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        image: Var,
        flow: Option<Var>,
    ) -> Result<SupportFeatures> {
        let a = self.adapt_image(g, p, image)?;
        let img = self.backbone(g, p, a)?;
        let (second, absent) = match (self.config.mode, flow) {
            (EmbeddingMode::SingleImage, _) => (self.zero_half(g), true),
            (_, Some(f)) => {
                let a = self.adapt_flow(g, p, f)?;
                (self.backbone(g, p, a)?, false)
            }
            (_, None) => {
                let m = self.missing.ok_or_else(|| Error::Config("missing-flow vector not allocated".into()))?;
                (self.replicate(g, p.get(m))?, true)
            }
        };
        self.finish(g, img, second, absent)
    }

    /// Both images through the image adapter and shared backbone, each branch
    /// offset by its temporal row (0 current, 1 prior). A missing prior is
    /// replaced by the replicated learned vector.
    pub fn embed_with_prior<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        current: Var,
        prior: Option<Var>,
    ) -> Result<SupportFeatures> {
        let (cur, pri) = self.prior_branches(g, p, current, prior)?;
        self.finish(g, cur, pri, prior.is_none())
    }

    /// Branch features of [`Self::embed_with_prior`] before concatenation.
    pub fn prior_branches<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        current: Var,
        prior: Option<Var>,
    ) -> Result<(Var, Var)> {
        let t = self.temporal.ok_or_else(|| Error::Config("temporal encoding requires prior_image mode".into()))?;
        let s = self.config.support_size();
        let c = self.config.support_channels;
        let rows = p.get(t);
        let a = self.adapt_image(g, p, current)?;
        let cur = self.backbone(g, p, a)?;
        let t0 = g.slice(rows, 0, 0, 1)?;
        let t0 = g.reshape(t0, &[c])?;
        let t0 = g.channel_broadcast(t0, &[s, s, s])?;
        let cur = g.add(cur, t0)?;
        let pri = match prior {
            Some(x) => {
                let a = self.adapt_image(g, p, x)?;
                let f = self.backbone(g, p, a)?;
                let t1 = g.slice(rows, 0, 1, 1)?;
                let t1 = g.reshape(t1, &[c])?;
                let t1 = g.channel_broadcast(t1, &[s, s, s])?;
                g.add(f, t1)?
            }
            None => {
                let m = self.missing.ok_or_else(|| Error::Config("missing vector not allocated".into()))?;
                self.replicate(g, p.get(m))?
            }
        };
        Ok((cur, pri))
    }

    /// Dispatches on the configured mode.
    pub fn embed<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        image: Var,
        prior: Option<Var>,
        flow: Option<Var>,
    ) -> Result<SupportFeatures> {
        match self.config.mode {
            EmbeddingMode::Flow | EmbeddingMode::SingleImage => self.embed_pair(g, p, image, flow),
            EmbeddingMode::PriorImage => self.embed_with_prior(g, p, image, prior),
        }
    }

    pub fn missing_vector(&self) -> Option<ParamId> {
        self.missing
    }

    pub fn temporal_encoding(&self) -> Option<ParamId> {
        self.temporal
    }

    /// Backbone parameter handles, in creation order.
    pub fn backbone_params(&self) -> Vec<ParamId> {
        let mut v = Vec::new();
        for s in &self.stages {
            v.extend([s.down.weight, s.down.bias, s.dense.weight, s.dense.bias]);
        }
        v.extend([self.head.weight, self.head.bias]);
        v
    }

    /// Image and flow adapter `(weight, bias)` handles.
    pub fn adapter_params(&self) -> [(ParamId, ParamId); 2] {
        [(self.adapt_image.weight, self.adapt_image.bias), (self.adapt_flow.weight, self.adapt_flow.bias)]
    }
}
