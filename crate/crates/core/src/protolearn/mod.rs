//! Prototype-based episodic learning on top of the encoder.

mod adam;
mod checkpoint;
mod features;
mod model;
mod proto;
mod train;

pub use adam::{adam_step, lr_schedule, AdamConfig, AdamState};
pub use checkpoint::{
    checkpoint_paths, load_checkpoint, save_checkpoint, Manifest, CHECKPOINT_FORMAT,
};
pub use features::{
    side_words, EpisodeBatch, Featurizer, FeaturizerConfig, FeaturizerState, ObfuscationPolicy,
    SideVocab,
};
pub use model::ProtoModel;
pub use proto::{
    compute_prototypes, distance, episode_loss_graph, logits_graph, predict, proto_loss,
    prototypes_graph, Distance, LossConfig, PrototypeSet,
};
pub use train::{train_meta, LogRow, TrainConfig, TrainLog, TrainOutcome};

use thiserror::Error;

use crate::encoder::EncoderError;
use crate::lexnorm::LexError;
use crate::taskforge::TaskError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error("class {0} has no support examples")]
    EmptyClass(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint does not match: {0}")]
    ManifestMismatch(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Task(#[from] TaskError),
}
