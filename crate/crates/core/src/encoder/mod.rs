//! Transformer sequence encoder with optional side-information fusion.

mod config;
mod model;

pub use config::{EncoderConfig, FusionMode};
pub use model::{Encoded, Encoder, Pass, SIDE_PAD, SIDE_UNK};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("side information is empty but fusion mode {0:?} needs it")]
    EmptySide(FusionMode),
    #[error("sequence of {len} positions exceeds max_len {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("sequence {0} has no non-pad tokens")]
    EmptySequence(usize),
    #[error("token id {id} outside 1..={vocab}")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
