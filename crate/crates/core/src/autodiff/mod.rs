//! Dense tensors and a reverse-mode differentiation tape.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, primitive_suite, weighted_sum, GradCheckCase, GradCheckReport};
pub(crate) use gradcheck::random_matrix;
pub use tape::{Tape, Var, EXP_LIMIT};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: input outside domain ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("invalid shape {0:?}: dimensions must be positive")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("row index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{op}: axis {axis} invalid for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("column slice {start}..{end} invalid for {cols} columns")]
    InvalidSlice { start: usize, end: usize, cols: usize },
    #[error("{op}: no inputs")]
    EmptyInput { op: &'static str },
    #[error("backward needs a one-element output, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("backward on an empty tape")]
    EmptyTape,
    #[error("finite-difference step {0} outside (0, 1e-2]")]
    InvalidStep(f64),
}
