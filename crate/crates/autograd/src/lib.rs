//! Reverse-mode automatic differentiation over dense, row-major tensors.
//!
//! The op set is deliberately narrow: it covers exactly what convolutional
//! encoder/decoder networks and their losses need (strided convolution and
//! its transpose, group/instance normalization, pointwise activations,
//! reductions, fully-connected layers). Everything is single-threaded and
//! evaluation order is fixed, so results are bitwise reproducible.
//!
//! Parameters live in a [`ParamStore`]. Two layers share weights by holding
//! the same [`ParamId`], so a shared parameter has one storage location and
//! receives one accumulated gradient.

mod error;
mod graph;
mod kernels;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use error::{Error, Result};
pub use graph::{ConvSpec, Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig, AdamState};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
