//! Federated graph semi-supervised learning: graph containers, Louvain client
//! partitioning, a small tape autodiff, a two-layer GAT, augmentation,
//! contrastive and distillation losses, federated training loops and
//! representation analysis.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file pin the common instantiations.

pub mod analysis;
pub mod augment;
pub mod diffcore;
pub mod error;
pub mod federation;
pub mod gnn;
pub mod graph;
pub mod losses;
pub mod partition;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TensorF64 = diffcore::Tensor<f64>;
pub type TensorF32 = diffcore::Tensor<f32>;
pub type GraphF64 = graph::Graph<f64>;
pub type GraphF32 = graph::Graph<f32>;
pub type GnnModelF64 = gnn::GnnModel<f64>;
pub type GnnModelF32 = gnn::GnnModel<f32>;
