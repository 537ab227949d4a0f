//! Minimal reverse-mode automatic differentiation over dense `f32` tensors.
//!
//! Values are recorded on a [`Tape`] in evaluation order; [`Tape::backward`]
//! walks the records once in reverse. Only the primitives the policy network
//! and its loss need are supported, and broadcasting is limited to
//! scalar-times-tensor and a row-wise bias.

mod adam;
pub mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use tape::{Gradients, Primitive, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("backward root must be scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("non-finite gradient in parameter tensor #{tensor}")]
    NonFiniteGradient { tensor: usize },
}

#[cfg(test)]
mod tests;
