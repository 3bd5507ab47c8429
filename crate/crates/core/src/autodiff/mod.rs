//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, param_grad_check};
pub use optim::Adagrad;
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Init, Tensor};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape(Vec<usize>),
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid axis {axis} for {op} on shape {shape:?}")]
    InvalidAxis { op: &'static str, axis: usize, shape: Vec<usize> },
    #[error("{op} outside its domain: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("backward already ran on this tape; reset it before recording again")]
    StaleTape,
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter {0} has no gradient")]
    MissingGradient(String),
    #[error("contract violated: {0}")]
    Contract(String),
}
