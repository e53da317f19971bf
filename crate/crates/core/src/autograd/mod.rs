//! Minimal reverse-mode automatic differentiation over dense tensors.

mod graph;
mod scalar;
mod tensor;

pub use graph::{log_softmax_in_place, softmax_in_place, Grads, Graph, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;
