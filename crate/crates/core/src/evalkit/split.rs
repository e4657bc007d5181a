use std::collections::BTreeSet;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::rng::{hash_str, rng_for};
use crate::taskforge::{RubricDataset, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    HeldOutRubric,
    HeldOutQuestion,
    HeldOutExam,
}

impl SplitMode {
    fn unit_name(self) -> &'static str {
        match self {
            SplitMode::HeldOutRubric => "rubric items",
            SplitMode::HeldOutQuestion => "questions",
            SplitMode::HeldOutExam => "exams",
        }
    }
}

/// Meta-train and meta-test option ids, partitioned by whole units.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub seed: u64,
    pub held_units: Vec<String>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitPlan {
    /// Splits built tasks by the plan; tasks not named in the plan go nowhere.
    pub fn partition(&self, tasks: &[Task]) -> (Vec<Task>, Vec<Task>) {
        let train: BTreeSet<&str> = self.train_ids.iter().map(String::as_str).collect();
        let test: BTreeSet<&str> = self.test_ids.iter().map(String::as_str).collect();
        let pick = |set: &BTreeSet<&str>| {
            tasks
                .iter()
                .filter(|t| set.contains(t.task_id.as_str()))
                .cloned()
                .collect()
        };
        (pick(&train), pick(&test))
    }
}

/// Holds out `max(1, round(fraction * units))` uniformly chosen units.
pub fn make_split(
    data: &RubricDataset,
    mode: SplitMode,
    fraction: f64,
    seed: u64,
) -> Result<SplitPlan, EvalError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EvalError::InvalidArgument(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let options = data.options();
    let unit_of = |o: &crate::taskforge::OptionInfo| -> String {
        match mode {
            SplitMode::HeldOutRubric => o.item_id.clone(),
            SplitMode::HeldOutQuestion => o.question_id.clone(),
            SplitMode::HeldOutExam => o.exam_id.clone(),
        }
    };
    let units: Vec<String> = options
        .iter()
        .map(unit_of)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if units.len() < 2 {
        return Err(EvalError::TooFewUnits {
            units: mode.unit_name(),
            have: units.len(),
        });
    }
    let held_n = ((fraction * units.len() as f64).round() as usize).clamp(1, units.len() - 1);
    let mut rng = rng_for(seed, &[hash_str(mode.unit_name())]);
    let mut held: Vec<String> = sample(&mut rng, units.len(), held_n)
        .into_iter()
        .map(|i| units[i].clone())
        .collect();
    held.sort();
    let held_set: BTreeSet<&str> = held.iter().map(String::as_str).collect();
    let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
    for o in &options {
        if held_set.contains(unit_of(o).as_str()) {
            test_ids.push(o.option_id.clone());
        } else {
            train_ids.push(o.option_id.clone());
        }
    }
    Ok(SplitPlan {
        mode,
        seed,
        held_units: held,
        train_ids,
        test_ids,
    })
}
