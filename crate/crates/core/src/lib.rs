//! Longitudinal 3D volume classification.
//!
//! The pipeline pairs each scan with an earlier scan of the same subject,
//! summarizes the change between them as a per-year displacement field,
//! embeds (image, flow) pairs with a weight-shared 3D CNN and classifies them
//! with a query transformer whose cross-attention samples the embedded grid at
//! learned, bounded offsets from a regular lattice.

pub mod config;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod flowfield;
pub mod io;
pub mod numerics;
pub mod querying;
pub mod scalar;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use numerics::{Graph, ParamStore, Tensor, Var};
pub use scalar::Scalar;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
