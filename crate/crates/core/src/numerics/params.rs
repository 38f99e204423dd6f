use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named trainable tensors.
///
/// Registration order is the canonical enumeration used by the optimizer and
/// by checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::full(shape, T::one()))
    }

    pub fn normal<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut R) -> ParamId {
        let dist = Normal::new(0.0, std).expect("finite standard deviation");
        let t = Tensor::from_fn(shape, |_| T::of(dist.sample(rng)));
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces every tensor's values, checking names and shapes line up.
    pub fn load(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<()> {
        if named.len() != self.tensors.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, model expects {}",
                named.len(),
                self.tensors.len()
            )));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != self.names[i] || t.shape() != self.tensors[i].shape() {
                return Err(Error::Data(format!(
                    "checkpoint entry {i} is {name} {:?}, model expects {} {:?}",
                    t.shape(),
                    self.names[i],
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = t.with_grad(true);
        }
        Ok(())
    }

    /// Records every parameter on `graph` as a trainable leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> BoundParams {
        BoundParams { vars: self.tensors.iter().map(|t| graph.param(t.clone())).collect() }
    }

    /// Records the given replacement values (same order and shapes) instead
    /// of the stored ones. Used by finite-difference checks.
    pub fn bind_values(&self, graph: &mut Graph<T>, values: &[Tensor<T>]) -> BoundParams {
        debug_assert_eq!(values.len(), self.tensors.len());
        BoundParams { vars: values.iter().map(|t| graph.param(t.clone())).collect() }
    }
}

/// Graph variables for every parameter of a store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
