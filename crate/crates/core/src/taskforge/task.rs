use serde::{Deserialize, Serialize};

use rand::seq::index::sample;

use super::{RubricDataset, TaskError};
use crate::lexnorm::{lex_normalize, LexConfig, TokenSequence};
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskOrigin {
    RubricOption,
    Cloze,
    Smlmt,
    Compile,
}

/// One program in a class pool. `key` is the program identity used to keep
/// support and query sets disjoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub key: String,
    pub tokens: TokenSequence,
}

/// Free text describing a task: the question prompt and the rubric text.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideText {
    pub prompt: String,
    pub rubric: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub origin: TaskOrigin,
    /// Class names; rubric tasks use `[absent, present]`, so class 1 is the
    /// positive class.
    pub class_labels: Vec<String>,
    pub pools: Vec<Vec<Example>>,
    pub side: SideText,
    pub question_id: Option<String>,
    pub rubric_item_id: Option<String>,
    pub exam_id: Option<String>,
}

impl Task {
    pub fn class_count(&self) -> usize {
        self.pools.len()
    }

    pub fn min_pool(&self) -> usize {
        self.pools.iter().map(Vec::len).min().unwrap_or(0)
    }
}

/// Counts of rubric options kept and dropped by [`build_tasks_from_rubric`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub options_seen: usize,
    pub tasks_built: usize,
    /// No program was labeled positive.
    pub dropped_all_perfect: usize,
    pub dropped_few_positives: usize,
    pub dropped_few_negatives: usize,
    pub unlexable_programs: usize,
}

/// Builds one binary task per rubric option with at least `k + q` positive
/// and `k + q` negative programs. Negatives are the other programs of the
/// same question.
pub fn build_tasks_from_rubric(
    data: &RubricDataset,
    lex: &LexConfig,
    k: usize,
    q: usize,
) -> Result<(Vec<Task>, BuildReport), TaskError> {
    if k == 0 || q == 0 {
        return Err(TaskError::Data("K and Q must be at least 1".into()));
    }
    let need = k + q;
    let mut report = BuildReport::default();
    let programs = data.programs_by_question();
    let positives = data.positives_by_option();

    // Lex every distinct program once; unlexable ones are left out of all pools.
    let mut lexed = std::collections::HashMap::new();
    for (qid, progs) in &programs {
        for (i, src) in progs.iter().enumerate() {
            match lex_normalize(src, lex) {
                Ok(tokens) => {
                    lexed.insert(
                        (qid.as_str(), src.as_str()),
                        Example {
                            key: format!("{qid}#{i}"),
                            tokens,
                        },
                    );
                }
                Err(e) => {
                    log::warn!("skipping program {qid}#{i}: {e}");
                    report.unlexable_programs += 1;
                }
            }
        }
    }

    let mut tasks = Vec::new();
    for opt in data.options() {
        report.options_seen += 1;
        let pos_set = &positives[&opt.option_id];
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for src in &programs[&opt.question_id] {
            if let Some(ex) = lexed.get(&(opt.question_id.as_str(), src.as_str())) {
                if pos_set.contains(src) {
                    pos.push(ex.clone());
                } else {
                    neg.push(ex.clone());
                }
            }
        }
        if pos_set.is_empty() {
            report.dropped_all_perfect += 1;
            continue;
        }
        if pos.len() < need {
            report.dropped_few_positives += 1;
            continue;
        }
        if neg.len() < need {
            report.dropped_few_negatives += 1;
            continue;
        }
        tasks.push(Task {
            task_id: opt.option_id.clone(),
            origin: TaskOrigin::RubricOption,
            class_labels: vec!["absent".into(), opt.option_id.clone()],
            pools: vec![neg, pos],
            side: SideText {
                prompt: opt.prompt_text.clone(),
                rubric: format!("{} {}", opt.item_text, opt.option_text),
            },
            question_id: Some(opt.question_id.clone()),
            rubric_item_id: Some(opt.item_id.clone()),
            exam_id: Some(opt.exam_id.clone()),
        });
    }
    report.tasks_built = tasks.len();
    Ok((tasks, report))
}

/// A sampled few-shot problem: `support[c]` and `query[c]` hold the examples
/// of class `c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub task_id: String,
    pub support: Vec<Vec<Example>>,
    pub query: Vec<Vec<Example>>,
    pub side: SideText,
}

impl Episode {
    /// Support examples flattened class by class, with their labels.
    pub fn support_flat(&self) -> (Vec<&Example>, Vec<usize>) {
        flatten(&self.support)
    }

    pub fn query_flat(&self) -> (Vec<&Example>, Vec<usize>) {
        flatten(&self.query)
    }

    /// Keeps only the first `k` support examples of every class.
    pub fn with_shots(&self, k: usize) -> Episode {
        Episode {
            task_id: self.task_id.clone(),
            support: self
                .support
                .iter()
                .map(|s| s[..k.min(s.len())].to_vec())
                .collect(),
            query: self.query.clone(),
            side: self.side.clone(),
        }
    }
}

fn flatten(sets: &[Vec<Example>]) -> (Vec<&Example>, Vec<usize>) {
    let mut ex = Vec::new();
    let mut labels = Vec::new();
    for (c, s) in sets.iter().enumerate() {
        for e in s {
            ex.push(e);
            labels.push(c);
        }
    }
    (ex, labels)
}

/// Draws `k` support and `q` query examples per class, uniformly without
/// replacement.
pub fn sample_episode(task: &Task, k: usize, q: usize, seed: u64) -> Result<Episode, TaskError> {
    let mut rng = rng_for(seed, &[]);
    let mut support = Vec::with_capacity(task.pools.len());
    let mut query = Vec::with_capacity(task.pools.len());
    for (c, pool) in task.pools.iter().enumerate() {
        if pool.len() < k + q {
            return Err(TaskError::InsufficientExamples {
                task_id: task.task_id.clone(),
                class: c,
                have: pool.len(),
                need: k + q,
            });
        }
        let idx = sample(&mut rng, pool.len(), k + q).into_vec();
        support.push(idx[..k].iter().map(|&i| pool[i].clone()).collect());
        query.push(idx[k..].iter().map(|&i| pool[i].clone()).collect());
    }
    Ok(Episode {
        task_id: task.task_id.clone(),
        support,
        query,
        side: task.side.clone(),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::taskforge::RubricRecord;

    fn example(i: usize) -> Example {
        Example {
            key: format!("p{i}"),
            tokens: lex_normalize(&format!("x = {i}"), &LexConfig::default()).unwrap(),
        }
    }

    fn task(sizes: &[usize]) -> Task {
        let mut next = 0;
        let pools = sizes
            .iter()
            .map(|&n| {
                let pool = (next..next + n).map(example).collect();
                next += n;
                pool
            })
            .collect();
        Task {
            task_id: "t".into(),
            origin: TaskOrigin::RubricOption,
            class_labels: vec!["a".into(), "b".into()],
            pools,
            side: SideText::default(),
            question_id: None,
            rubric_item_id: None,
            exam_id: None,
        }
    }

    #[test]
    fn forced_partition_uses_whole_pool() {
        let t = task(&[5, 5]);
        let ep = sample_episode(&t, 3, 2, 1).unwrap();
        for c in 0..2 {
            let mut keys: HashSet<_> = ep.support[c].iter().map(|e| e.key.clone()).collect();
            assert_eq!(keys.len(), 3);
            for e in &ep.query[c] {
                assert!(keys.insert(e.key.clone()));
            }
            let all: HashSet<_> = t.pools[c].iter().map(|e| e.key.clone()).collect();
            assert_eq!(keys, all);
        }
    }

    #[test]
    fn short_pool_and_determinism() {
        let t = task(&[5, 4]);
        assert!(matches!(
            sample_episode(&t, 3, 2, 0),
            Err(TaskError::InsufficientExamples {
                class: 1,
                have: 4,
                need: 5,
                ..
            })
        ));
        let t = task(&[9, 9]);
        assert_eq!(
            sample_episode(&t, 3, 2, 4).unwrap(),
            sample_episode(&t, 3, 2, 4).unwrap()
        );
        assert_ne!(
            sample_episode(&t, 3, 2, 4).unwrap(),
            sample_episode(&t, 3, 2, 5).unwrap()
        );
    }

    #[test]
    fn support_frequency_is_uniform() {
        let (k, q) = (3, 5);
        let t = task(&[k + q, k + q]);
        let mut counts = vec![0usize; k + q];
        let trials = 1000;
        for seed in 0..trials {
            let ep = sample_episode(&t, k, q, seed).unwrap();
            for e in &ep.support[0] {
                counts[e.key[1..].parse::<usize>().unwrap()] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - k as f64 / (k + q) as f64).abs() < 0.05, "{f}");
        }
    }

    fn rec(opt: &str, prog: usize, label: u8) -> RubricRecord {
        RubricRecord {
            exam_id: "e".into(),
            question_id: "q".into(),
            prompt_text: "prompt".into(),
            rubric_item_id: "i".into(),
            rubric_item_text: "item".into(),
            rubric_option_id: opt.into(),
            rubric_option_text: opt.into(),
            program: format!("x = {prog}\n"),
            label,
        }
    }

    #[test]
    fn rubric_filters() {
        let (k, q) = (2, 1);
        let mut records = Vec::new();
        // "edge": exactly k+q positives and k+q negatives.
        for p in 0..6 {
            records.push(rec("edge", p, u8::from(p < 3)));
            records.push(rec("few", p, u8::from(p < 2)));
            records.push(rec("perfect", p, 0));
        }
        let data = RubricDataset::new(records);
        let (tasks, report) = build_tasks_from_rubric(&data, &LexConfig::default(), k, q).unwrap();
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].task_id, "edge");
        assert_eq!(
            tasks[0].pools.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![3, 3]
        );
        assert_eq!(report.dropped_few_positives, 1);
        assert_eq!(report.dropped_all_perfect, 1);
        assert_eq!(tasks[0].side.rubric, "item edge");
    }
}
