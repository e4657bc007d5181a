//! End-to-end stages from synthetic records to trained, evaluated models.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::evalkit::{EvalError, SplitPlan};
use crate::lexnorm::LexError;
use crate::protolearn::{Featurizer, Manifest, ProtoError, ProtoModel, TrainOutcome};
use crate::taskforge::{
    build_tasks_from_rubric, mix_augmented, synth_corpus_with, BuildReport, Example, RubricDataset,
    Task, TaskError,
};

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

impl From<TaskError> for Error {
    fn from(e: TaskError) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<LexError> for Error {
    fn from(e: LexError) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<ProtoError> for Error {
    fn from(e: ProtoError) -> Self {
        match e {
            ProtoError::NonFinite(m) => Error::Numeric(m),
            ProtoError::Config(m) => Error::Config(ConfigError {
                key: "model".into(),
                message: m,
            }),
            ProtoError::Io(m) => Error::Io(m),
            ProtoError::Task(t) => t.into(),
            other => Error::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for Error {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Proto(p) => p.into(),
            EvalError::Task(t) => t.into(),
            EvalError::Io(m) => Error::Io(m),
            other => Error::Data(other.to_string()),
        }
    }
}

pub fn corpus(cfg: &RunConfig) -> RubricDataset {
    synth_corpus_with(&cfg.data)
}

pub fn rubric_tasks(
    cfg: &RunConfig,
    data: &RubricDataset,
) -> Result<(Vec<Task>, BuildReport), Error> {
    Ok(build_tasks_from_rubric(
        data,
        &cfg.lex,
        cfg.tasks.k,
        cfg.tasks.q,
    )?)
}

/// Meta-train and meta-test tasks under the configured held-out split.
pub fn split(
    cfg: &RunConfig,
    data: &RubricDataset,
    tasks: &[Task],
) -> Result<(SplitPlan, Vec<Task>, Vec<Task>), Error> {
    let plan = crate::evalkit::make_split(
        data,
        cfg.tasks.split,
        cfg.tasks.split_fraction,
        cfg.tasks.plan_seed(cfg.seed),
    )?;
    let (train, test) = plan.partition(tasks);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(format!(
            "split leaves {} meta-train and {} meta-test tasks",
            train.len(),
            test.len()
        )));
    }
    Ok((plan, train, test))
}

/// Distinct programs appearing in the pools of `tasks`.
pub fn program_corpus(tasks: &[Task]) -> Vec<Example> {
    let mut seen = BTreeSet::new();
    tasks
        .iter()
        .flat_map(|t| t.pools.iter().flatten())
        .filter(|e| seen.insert(e.key.clone()))
        .cloned()
        .collect()
}

/// Appends augmented tasks built from the meta-train programs.
pub fn augment(cfg: &RunConfig, train: Vec<Task>) -> Result<Vec<Task>, Error> {
    if cfg.tasks.aug_ratio == 0.0 {
        return Ok(train);
    }
    let corpus = program_corpus(&train);
    Ok(mix_augmented(
        &train,
        &corpus,
        cfg.tasks.aug_ratio,
        cfg.tasks.k,
        cfg.tasks.q,
        cfg.seed,
    )?)
}

/// Fits subword merges and the side vocabulary on `train`, then sizes the
/// encoder to match.
pub fn featurize(cfg: &RunConfig, train: &[Task]) -> Result<(Featurizer, ProtoModel), Error> {
    let probe = ProtoModel::new(cfg.model.encoder(2, 2), cfg.loss.clone())?;
    let featurizer = Featurizer::fit(train, &cfg.lex, &cfg.features, probe.max_program_ids())?;
    let enc = cfg
        .model
        .encoder(featurizer.vocab_size(), featurizer.side.size());
    Ok((featurizer, ProtoModel::new(enc, cfg.loss.clone())?))
}

/// Everything needed to train and evaluate one run.
pub struct Prepared {
    pub data: RubricDataset,
    pub report: BuildReport,
    pub plan: SplitPlan,
    /// Meta-train tasks, augmented ones included.
    pub train: Vec<Task>,
    pub test: Vec<Task>,
    pub featurizer: Featurizer,
    pub model: ProtoModel,
}

pub fn prepare(cfg: &RunConfig, data: RubricDataset) -> Result<Prepared, Error> {
    let (tasks, report) = rubric_tasks(cfg, &data)?;
    let (plan, train, test) = split(cfg, &data, &tasks)?;
    let train = augment(cfg, train)?;
    let (featurizer, model) = featurize(cfg, &train)?;
    Ok(Prepared {
        data,
        report,
        plan,
        train,
        test,
        featurizer,
        model,
    })
}

pub fn train(cfg: &RunConfig, p: &Prepared) -> Result<TrainOutcome, Error> {
    let init = p.model.init_params(cfg.seed);
    Ok(crate::protolearn::train_meta(
        &p.model,
        &p.featurizer,
        &p.train,
        init,
        &cfg.train_config(),
    )?)
}

pub fn manifest(
    cfg: &RunConfig,
    model: &ProtoModel,
    featurizer: &Featurizer,
    steps: u64,
) -> Manifest {
    Manifest {
        format: String::new(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        steps,
        encoder: model.config().clone(),
        loss: model.loss.clone(),
        featurizer: featurizer.state(),
        tensors: Vec::new(),
    }
}
