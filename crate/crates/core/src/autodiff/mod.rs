//! Minimal reverse-mode differentiation over dense tensors.

mod graph;
pub mod kernels;
mod optim;

pub use graph::{DiffNode, Graph, NodeId, Op};
pub use kernels::Padding;
pub use optim::{sgd_step, Param, SgdState, DEFAULT_LEARNING_RATE};
