//! Dense tensors with tape-based reverse-mode differentiation.

mod gradcheck;
mod graph;
pub mod kernels;
mod params;
#[allow(clippy::module_inception)]
mod tensor;

pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use params::{BoundParams, ParamStore, TensorEntry};
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("expected a one-element tensor, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("shape {shape:?} does not fit {len} values")]
    BadData { shape: Vec<usize>, len: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("unknown parameter {0}")]
    MissingParameter(String),
    #[error("blob holds {found} bytes, manifest expects {expected}")]
    CorruptBlob { expected: usize, found: usize },
}
