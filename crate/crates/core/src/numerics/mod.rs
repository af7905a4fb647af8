//! Dense tensors, a reverse-mode tape and optimizers.

pub mod gradcheck;
mod graph;
pub mod ops;
mod optim;
mod tensor;

pub use graph::{Gradients, Graph, ParamId, Var};
pub use ops::{cross_entropy_soft, matmul, softmax};
pub use optim::{adam_step, AdamConfig, Optimizer, OptimizerKind, OptimizerState, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not match data length {len}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{0}: non-finite value produced")]
    NonFinite(&'static str),
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("target is not a probability distribution (mass {0})")]
    NotADistribution(f64),
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss is not connected to any trainable parameter")]
    Disconnected,
    #[error("unknown parameter {0}")]
    UnknownParam(String),
}
