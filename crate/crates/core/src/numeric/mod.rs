//! Dense tensors, reverse-mode differentiation, and optimization.
//!
//! The engine is deliberately small: 64-bit row-major matrices, a linear
//! operation tape per forward pass, a named parameter store, and an
//! adaptive-moment optimizer.

mod checkpoint;
mod grad_check;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use grad_check::{grad_check, grad_check_floor, grad_check_many, relative_error, GradCheckReport, NEGLIGIBLE};
pub use optim::{Adam, AdamConfig};
pub use params::{glorot_uniform, Bound, ParamId, ParamStore};
pub use tape::{eager, Gradients, Neighborhoods, Tape, Var};
pub use tensor::Tensor;


use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("tensor extents must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("{rows}x{cols} tensor cannot hold {len} values")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("{op}: index {index} out of range for extent {len}")]
    OutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("softmax over an empty support (every position masked)")]
    EmptySupport,
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: [usize; 2] },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("values recorded on different tapes cannot be combined")]
    TapeMismatch,
    #[error("parameter `{name}` has no gradient")]
    MissingGrad { name: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
}
