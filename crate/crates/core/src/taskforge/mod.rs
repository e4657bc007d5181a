//! Rubric datasets, few-shot tasks, episode sampling and synthetic tasks.

mod augment;
mod dataset;
mod syntax;
mod synth;
mod task;

pub use augment::{
    cloze_candidates, make_cloze_task, make_compile_task, make_smlmt_task, mix_augmented,
    outcome_histogram,
};
pub use dataset::{OptionInfo, RubricDataset, RubricRecord};
pub use syntax::{check_syntax, OutcomeClass};
pub use synth::{
    plan_question, synth_corpus, synth_corpus_with, Family, ItemPlan, QuestionPlan, SynthConfig,
};
pub use task::{
    build_tasks_from_rubric, sample_episode, BuildReport, Episode, Example, SideText, Task,
    TaskOrigin,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("task {task_id} class {class} has {have} examples, {need} needed")]
    InsufficientExamples {
        task_id: String,
        class: usize,
        have: usize,
        need: usize,
    },
    #[error("only {0} maskable tokens meet the frequency bar, 2 needed")]
    NoViableTokens(usize),
    #[error("only {0} compile outcomes meet the frequency bar, 2 needed")]
    NoViableOutcomes(usize),
    #[error("{0}")]
    Data(String),
}
