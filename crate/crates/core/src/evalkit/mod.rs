//! Ranking metrics, held-out splits, meta-test evaluation, the per-task
//! supervised baseline and embedding export.

mod baseline;
mod eval;
mod metrics;
mod pca;
mod split;

pub use baseline::{baseline_scores, supervised_baseline, BaselineConfig};
pub use eval::{
    degrade_study, eval_episode_seed, eval_meta_test, eval_meta_test_with, score_episode,
    EvalReport, MetricSet, TaskRow, POSITIVE_CLASS,
};
pub use metrics::{average_precision, precision_at_recall, roc_auc};
pub use pca::{export_embeddings, pca_2d, Pca2d};
pub use split::{make_split, SplitMode, SplitPlan};

use thiserror::Error;

use crate::protolearn::ProtoError;
use crate::taskforge::TaskError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 2 {units} to hold one out, found {have}")]
    TooFewUnits { units: &'static str, have: usize },
    #[error("no positive labels")]
    NoPositives,
    #[error("labels contain only one class")]
    OneClassOnly,
    #[error("covariance is zero")]
    DegenerateCovariance,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Proto(#[from] ProtoError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

impl From<TensorError> for EvalError {
    fn from(e: TensorError) -> Self {
        EvalError::Proto(e.into())
    }
}
