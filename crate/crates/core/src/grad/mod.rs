//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The op set is exactly what the micro-transformer needs: matmul, add,
//! mul, scale, row-wise softmax, layer normalization, GELU, embedding
//! gather, concat, slice and softmax cross-entropy. Graphs are recorded on a
//! [`Tape`], evaluated once per set of [`Bindings`], and differentiated with
//! respect to every input declared as marked.

mod check;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_excluding};
pub use tape::{Axis, Bindings, Gradient, NodeId, Tape};
pub use tensor::Tensor;

pub(crate) use tape::masked_softmax_row;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("tensor shape {shape:?} does not hold {len} values")]
    InvalidTensor { shape: Vec<usize>, len: usize },
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("input node {node} has no binding")]
    MissingBinding { node: usize },
    #[error("backward requested before forward")]
    NotEvaluated,
    #[error("gradient check failed: {0}")]
    Check(String),
}

#[cfg(test)]
mod tests;
