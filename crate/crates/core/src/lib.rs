//! Neural atoms for long-range message passing on molecular graphs.
//!
//! Node embeddings from a short-range GNN layer are softly grouped onto a small
//! set of learnable *neural atoms* by multi-head attention, the neural atoms
//! exchange information through self-attention, and the result is projected
//! back onto the nodes. Any two nodes are therefore one hop apart through the
//! neural-atom channel regardless of their graph distance.
//!
//! The crate contains everything needed to train and inspect such models from
//! scratch: a small reverse-mode autodiff tape ([`tensor`]), GCN/GIN layers
//! ([`gnn`]), attention ([`attention`]), the neural-atom block
//! ([`neural_atoms`]), per-layer atom-count schedules ([`schedule`]), a
//! virtual-node baseline ([`baselines`]), the Ewald sum matrix used as an
//! analytic interaction reference ([`ewald`]), and the training harness and CLI
//! ([`harness`], [`cli`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); the aliases below fix
//! the `f64` instantiations used by training and the CLI.

pub mod attention;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod ewald;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod neural_atoms;
pub mod params;
pub mod scalar;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type Tape32 = tensor::Tape<f32>;
pub type ParamStore64 = params::ParamStore<f64>;
pub type EwaldSystem64 = ewald::EwaldSystem<f64>;
pub type EwaldSystem32 = ewald::EwaldSystem<f32>;
pub type EwaldMatrix64 = ewald::EwaldMatrix<f64>;
pub type Model64 = harness::Model<f64>;
