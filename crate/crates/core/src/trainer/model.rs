use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, Sample};
use crate::embedding::{Embedding, EmbeddingConfig, EmbeddingMode, SupportFeatures};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, BoundParams, Graph, ParamStore, Var};
use crate::querying::{LinearIds, QueryOutput, Querying, QueryingConfig};
use crate::scalar::Scalar;

/// Stream of [`derive_seed`] used for parameter initialization.
pub(crate) const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding: EmbeddingConfig,
    pub querying: QueryingConfig,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self { embedding: EmbeddingConfig::desk(), querying: QueryingConfig::desk() }
    }

    pub fn full_scale() -> Self {
        Self { embedding: EmbeddingConfig::full_scale(), querying: QueryingConfig::full_scale() }
    }

    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        self.querying.validate()
    }
}

/// Embedding, querying blocks and a linear head on the first query.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub embedding: Embedding,
    pub querying: Querying,
    /// `[d, 1]` weight and `[1]` bias.
    pub head: LinearIds,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// Scalar logit, shape `[1]`.
    pub logit: Var,
    pub support: SupportFeatures,
    pub query: QueryOutput,
}

/// Logit from query 0 of `queries [N_Q, d]`; the remaining rows are not read.
pub fn classify<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, head: &LinearIds, queries: Var) -> Result<Var> {
    let s = g.shape(queries);
    if s.len() != 2 || s[0] == 0 {
        return Err(Error::shape("classify", format!("queries must be [N_Q >= 1, d], got {s:?}")));
    }
    let first = g.slice(queries, 0, 0, 1)?;
    let z = head.apply(g, p, first)?;
    g.reshape(z, &[1])
}

impl<T: Scalar> Model<T> {
    /// Builds a freshly initialized model; the seed fixes every parameter.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, INIT_STREAM));
        let mut params = ParamStore::new();
        let embedding = Embedding::new(config.embedding.clone(), &mut params, &mut rng)?;
        let querying =
            Querying::new(config.querying.clone(), config.embedding.fused_channels(), &mut params, &mut rng)?;
        let head = LinearIds::new(&mut params, "head", config.querying.d, 1, &mut rng);
        Ok(Self { config, params, embedding, querying, head })
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.config.embedding.mode
    }

    fn check_sample(&self, sample: &Sample<T>) -> Result<()> {
        let n = self.config.embedding.input_size;
        if sample.image.shape() != [1, n, n, n] {
            return Err(Error::Data(format!(
                "{}: image {:?} does not match model input {n}³",
                sample.id,
                sample.image.shape()
            )));
        }
        Ok(())
    }

    /// Records the full forward pass for `sample` on `g`.
    pub fn forward(&self, g: &mut Graph<T>, p: &BoundParams, sample: &Sample<T>) -> Result<ModelOutput> {
        self.check_sample(sample)?;
        let image = g.constant(sample.image.clone());
        let (prior, flow) = match self.mode() {
            EmbeddingMode::Flow => (None, sample.flow.clone().map(|f| g.constant(f))),
            EmbeddingMode::PriorImage => (sample.prior.as_ref().map(|(t, _)| g.constant(t.clone())), None),
            EmbeddingMode::SingleImage => (None, None),
        };
        let support = self.embedding.embed(g, p, image, prior, flow)?;
        let encoded = support.encoded(g)?;
        let query = self.querying.forward(g, p, encoded)?;
        let logit = classify(g, p, &self.head, query.queries)?;
        Ok(ModelOutput { logit, support, query })
    }

    /// Forward pass plus BCE against the sample label.
    pub fn loss(&self, g: &mut Graph<T>, p: &BoundParams, sample: &Sample<T>) -> Result<(Var, ModelOutput)> {
        let out = self.forward(g, p, sample)?;
        let loss = g.bce_with_logits(out.logit, T::of(f64::from(sample.label)))?;
        Ok((loss, out))
    }

    pub fn logit(&self, sample: &Sample<T>) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let out = self.forward(&mut g, &p, sample)?;
        Ok(g.value(out.logit).item().to_f64_lossless())
    }

    /// `sigmoid(logit)`.
    pub fn score(&self, sample: &Sample<T>) -> Result<f64> {
        Ok(sigmoid(self.logit(sample)?))
    }
}
