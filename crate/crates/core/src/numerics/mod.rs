//! Dense tensors, reverse-mode differentiation, Adam and gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, Kink};
pub use graph::{bce_value, sigmoid, Gradients, Graph, Var};
pub use params::{BoundParams, ParamId, ParamStore};
pub use tensor::Tensor;
