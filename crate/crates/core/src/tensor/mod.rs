//! Dense tensors, reverse-mode differentiation and a finite-difference oracle.

mod gradcheck;
pub mod kernels;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use gradcheck::{
    finite_diff_check, max_relative_error, numeric_gradient, relative_error, GradCheck,
};
pub use tape::{gelu_scalar, normal_cdf, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} has a zero or missing dimension")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: range {start}..{} exceeds extent {extent}", start + len)]
    OutOfRange {
        op: &'static str,
        start: usize,
        len: usize,
        extent: usize,
    },
    #[error("{0}: no inputs")]
    Empty(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{labels} labels for {rows} rows")]
    LabelCount { rows: usize, labels: usize },
    #[error("backward needs a one-element loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("finite-difference oracle invalid: {0}")]
    OracleInvalid(String),
}
