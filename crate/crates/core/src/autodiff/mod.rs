//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! replays it in reverse. The op set is just what the recurrent encoder,
//! the two attention levels and the gating chain need. Broadcasting is
//! limited to matrix-vector ([`Tape::add_row`]) and vector-scalar
//! ([`Tape::mul_scalar`], [`Tape::div_scalar`]) forms.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_many, GradCheckReport};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {shapes:?}")]
    Shape {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("index {index} out of range for length {len} in {op}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("invalid tensor shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("finite-difference step {0} outside [1e-6, 1e-3]")]
    StepSize(f64),
    #[error("function value is not finite at a perturbed point")]
    NonFinite,
    #[error("degenerate fused attention: normalizer {0:e}")]
    DegenerateAttention(f64),
}
