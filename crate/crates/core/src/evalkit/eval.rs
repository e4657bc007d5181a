use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{average_precision, precision_at_recall, roc_auc, EvalError};
use crate::protolearn::{compute_prototypes, predict, EpisodeBatch, Featurizer, ProtoModel};
use crate::rng::{derive_seed, hash_str};
use crate::taskforge::{sample_episode, Task};
use crate::tensor::ParamStore;

/// Class probability of class 1 is the ranking score; class 1 is the positive
/// class of every rubric task.
pub const POSITIVE_CLASS: usize = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub ap: f64,
    pub p50: f64,
    pub p75: f64,
    pub auc: f64,
}

impl MetricSet {
    pub fn from_scores(scores: &[f64], labels: &[bool]) -> Result<Self, EvalError> {
        Ok(MetricSet {
            ap: average_precision(scores, labels)?,
            p50: precision_at_recall(scores, labels, 0.5)?,
            p75: precision_at_recall(scores, labels, 0.75)?,
            auc: roc_auc(scores, labels)?,
        })
    }

    fn fields(&self) -> [f64; 4] {
        [self.ap, self.p50, self.p75, self.auc]
    }

    fn from_fields(f: [f64; 4]) -> Self {
        MetricSet {
            ap: f[0],
            p50: f[1],
            p75: f[2],
            auc: f[3],
        }
    }

    /// Unweighted mean.
    pub fn mean(sets: &[MetricSet]) -> MetricSet {
        let n = sets.len().max(1) as f64;
        let mut acc = [0.0; 4];
        for s in sets {
            acc.iter_mut().zip(s.fields()).for_each(|(a, v)| *a += v);
        }
        MetricSet::from_fields(acc.map(|a| a / n))
    }

    /// Sample standard deviation; zero for fewer than two sets.
    pub fn std(sets: &[MetricSet]) -> MetricSet {
        if sets.len() < 2 {
            return MetricSet::default();
        }
        let m = MetricSet::mean(sets).fields();
        let mut acc = [0.0; 4];
        for s in sets {
            for (i, v) in s.fields().iter().enumerate() {
                acc[i] += (v - m[i]) * (v - m[i]);
            }
        }
        MetricSet::from_fields(acc.map(|a| (a / (sets.len() - 1) as f64).sqrt()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub seed: u64,
    pub metrics: MetricSet,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub shots: usize,
    pub queries: usize,
    pub seeds: Vec<u64>,
    pub n_tasks: usize,
    pub rows: Vec<TaskRow>,
    /// Unweighted task mean for each seed.
    pub per_seed: Vec<MetricSet>,
    pub mean: MetricSet,
    pub std: MetricSet,
}

impl EvalReport {
    pub fn from_rows(
        method: &str,
        shots: usize,
        queries: usize,
        seeds: &[u64],
        n_tasks: usize,
        rows: Vec<TaskRow>,
    ) -> Self {
        let per_seed: Vec<MetricSet> = seeds
            .iter()
            .map(|s| {
                let sets: Vec<MetricSet> = rows
                    .iter()
                    .filter(|r| r.seed == *s)
                    .map(|r| r.metrics)
                    .collect();
                MetricSet::mean(&sets)
            })
            .collect();
        EvalReport {
            method: method.to_string(),
            shots,
            queries,
            seeds: seeds.to_vec(),
            n_tasks,
            mean: MetricSet::mean(&per_seed),
            std: MetricSet::std(&per_seed),
            per_seed,
            rows,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-task rows followed by one `mean` and one `std` row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("task_id\tseed\tap\tp50\tp75\tauc\tpositives\tnegatives\n");
        for r in &self.rows {
            let m = r.metrics;
            writeln!(
                s,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
                r.task_id, r.seed, m.ap, m.p50, m.p75, m.auc, r.positives, r.negatives
            )
            .unwrap();
        }
        for (name, m) in [("mean", self.mean), ("std", self.std)] {
            writeln!(
                s,
                "{name}\t\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t\t",
                m.ap, m.p50, m.p75, m.auc
            )
            .unwrap();
        }
        s
    }
}

/// Seed of the evaluation episode for one task and run seed.
pub fn eval_episode_seed(seed: u64, task_id: &str) -> u64 {
    derive_seed(seed, &[hash_str(task_id)])
}

/// Scores the query set of one featurized episode by positive-class
/// probability under the prototype classifier.
pub fn score_episode(
    model: &ProtoModel,
    params: &ParamStore<f32>,
    batch: &EpisodeBatch,
) -> Result<Vec<f64>, EvalError> {
    let seqs: Vec<_> = batch.support.iter().chain(&batch.query).cloned().collect();
    let emb = model.embed(params, &seqs, &batch.prompt, &batch.rubric)?;
    let (sup, qry) = emb.split_at(batch.support.len());
    let protos = compute_prototypes(sup, &batch.support_labels, batch.n_classes)?;
    let tau = model.tau(params);
    Ok(qry
        .iter()
        .map(|q| predict(&protos, q, tau, model.loss.distance).1[POSITIVE_CLASS])
        .collect())
}

/// Evaluates with `shots` support examples per class taken from episodes
/// drawn at `sample_shots`, so smaller shot counts share their queries.
pub fn eval_meta_test_with(
    model: &ProtoModel,
    params: &ParamStore<f32>,
    featurizer: &Featurizer,
    tasks: &[Task],
    sample_shots: usize,
    shots: usize,
    queries: usize,
    seeds: &[u64],
) -> Result<EvalReport, EvalError> {
    if shots == 0 || shots > sample_shots {
        return Err(EvalError::InvalidArgument(format!(
            "shots {shots} outside 1..={sample_shots}"
        )));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        for task in tasks {
            let ep = sample_episode(
                task,
                sample_shots,
                queries,
                eval_episode_seed(seed, &task.task_id),
            )?
            .with_shots(shots);
            let batch = featurizer.episode_batch(&ep, None)?;
            let scores = score_episode(model, params, &batch)?;
            let labels: Vec<bool> = batch
                .query_labels
                .iter()
                .map(|&c| c == POSITIVE_CLASS)
                .collect();
            let positives = labels.iter().filter(|&&l| l).count();
            rows.push(TaskRow {
                task_id: task.task_id.clone(),
                seed,
                metrics: MetricSet::from_scores(&scores, &labels)?,
                positives,
                negatives: labels.len() - positives,
            });
        }
    }
    Ok(EvalReport::from_rows(
        "proto",
        shots,
        queries,
        seeds,
        tasks.len(),
        rows,
    ))
}

pub fn eval_meta_test(
    model: &ProtoModel,
    params: &ParamStore<f32>,
    featurizer: &Featurizer,
    tasks: &[Task],
    shots: usize,
    queries: usize,
    seeds: &[u64],
) -> Result<EvalReport, EvalError> {
    eval_meta_test_with(
        model, params, featurizer, tasks, shots, shots, queries, seeds,
    )
}

/// One report per entry of `shots`, all drawn from episodes sampled at the
/// largest shot count.
pub fn degrade_study(
    model: &ProtoModel,
    params: &ParamStore<f32>,
    featurizer: &Featurizer,
    tasks: &[Task],
    shots: &[usize],
    queries: usize,
    seeds: &[u64],
) -> Result<Vec<EvalReport>, EvalError> {
    let max = shots
        .iter()
        .copied()
        .max()
        .ok_or_else(|| EvalError::InvalidArgument("no shot counts".into()))?;
    shots
        .iter()
        .map(|&k| eval_meta_test_with(model, params, featurizer, tasks, max, k, queries, seeds))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sample_std() {
        let a = MetricSet {
            ap: 0.5,
            p50: 1.0,
            p75: 0.0,
            auc: 0.5,
        };
        let b = MetricSet {
            ap: 1.0,
            p50: 1.0,
            p75: 1.0,
            auc: 0.7,
        };
        let m = MetricSet::mean(&[a, b]);
        assert_eq!(m.ap, 0.75);
        let s = MetricSet::std(&[a, b]);
        assert!((s.ap - 0.5f64.sqrt() * 0.5).abs() < 1e-12);
        assert_eq!(s.p50, 0.0);
        assert_eq!(MetricSet::std(&[a]), MetricSet::default());
    }

    #[test]
    fn aggregate_is_unweighted_task_mean() {
        let row = |t: &str, seed, ap| TaskRow {
            task_id: t.into(),
            seed,
            metrics: MetricSet {
                ap,
                ..Default::default()
            },
            positives: 1,
            negatives: 1,
        };
        let r = EvalReport::from_rows(
            "x",
            1,
            1,
            &[0, 1],
            2,
            vec![
                row("a", 0, 1.0),
                row("b", 0, 0.5),
                row("a", 1, 0.5),
                row("b", 1, 0.5),
            ],
        );
        assert_eq!(r.per_seed[0].ap, 0.75);
        assert_eq!(r.per_seed[1].ap, 0.5);
        assert_eq!(r.mean.ap, 0.625);
        assert!(r.to_tsv().lines().last().unwrap().starts_with("std"));
    }
}
