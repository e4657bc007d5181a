use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adam_step, lr_schedule, AdamConfig, AdamState, Featurizer, ProtoError, ProtoModel};
use crate::encoder::Pass;
use crate::rng::{derive_seed, rng_for};
use crate::taskforge::{sample_episode, Task};
use crate::tensor::{Gradients, Graph, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Support examples per class.
    pub k: usize,
    /// Query examples per class.
    pub q: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Episodes whose gradients are averaged into one optimizer step.
    pub grad_accum: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            k: 10,
            q: 10,
            seed: 0,
            adam: AdamConfig::default(),
            grad_accum: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProtoError> {
        if self.epochs == 0 || self.k == 0 || self.q == 0 || self.grad_accum == 0 {
            return Err(ProtoError::Config(
                "epochs, k, q and grad_accum must be positive".into(),
            ));
        }
        self.adam.validate()
    }

    pub fn total_steps(&self, n_tasks: usize) -> u64 {
        (self.epochs * n_tasks).div_ceil(self.grad_accum) as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub task_id: String,
    pub loss: f32,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\ttask_id\tloss\tlr\n");
        for r in &self.rows {
            writeln!(s, "{}\t{}\t{}\t{}", r.epoch, r.task_id, r.loss, r.lr).unwrap();
        }
        s
    }

    /// Mean loss of every epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for r in &self.rows {
            if sums.len() <= r.epoch {
                sums.resize(r.epoch + 1, (0.0, 0));
            }
            sums[r.epoch].0 += f64::from(r.loss);
            sums[r.epoch].1 += 1;
        }
        sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }
}

pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    pub log: TrainLog,
    pub steps: u64,
}

const TAG_ORDER: u64 = 1;
const TAG_EPISODE: u64 = 2;

/// Episodic training: each epoch visits every task once in a seeded random
/// order, drawing one fresh episode per visit.
pub fn train_meta(
    model: &ProtoModel,
    featurizer: &Featurizer,
    tasks: &[Task],
    init: ParamStore<f32>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ProtoError> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(ProtoError::Config("no training tasks".into()));
    }
    let total = cfg.total_steps(tasks.len());
    let warmup = cfg.adam.warmup_steps(total);
    let mut params = init;
    let mut state = AdamState::default();
    let mut log = TrainLog::default();
    let mut acc: Option<Gradients<f32>> = None;
    let mut pending = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..tasks.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[TAG_ORDER, epoch as u64]));
        for (j, &ti) in order.iter().enumerate() {
            let task = &tasks[ti];
            let ep_seed = derive_seed(cfg.seed, &[TAG_EPISODE, epoch as u64, j as u64]);
            let episode = sample_episode(task, cfg.k, cfg.q, ep_seed)?;
            let batch = featurizer.episode_batch(&episode, Some(derive_seed(ep_seed, &[1])))?;
            let mut drop_rng = rng_for(ep_seed, &[2]);
            let mut g = Graph::<f32>::new();
            let bound = params.bind(&mut g);
            let loss =
                model.episode_loss(&mut g, &bound, &batch, &mut Pass::Train(&mut drop_rng))?;
            let value = g.value(loss).item()?;
            let grads = g.backward(loss)?;
            if !value.is_finite() || grads.values().any(|t| !t.is_finite()) {
                return Err(ProtoError::NonFinite(format!(
                    "epoch {epoch}, task {}",
                    task.task_id
                )));
            }
            let lr = lr_schedule(state.t + 1, warmup, total, cfg.adam.peak_lr);
            log.rows.push(LogRow {
                epoch,
                task_id: task.task_id.clone(),
                loss: value,
                lr,
            });
            accumulate(&mut acc, grads);
            pending += 1;
            let last = epoch + 1 == cfg.epochs && j + 1 == order.len();
            if pending == cfg.grad_accum || last {
                let mut grads = acc.take().expect("accumulated");
                if pending > 1 {
                    let inv = 1.0 / pending as f32;
                    grads
                        .values_mut()
                        .for_each(|t| t.data_mut().iter_mut().for_each(|x| *x *= inv));
                }
                adam_step(&mut params, &grads, &mut state, &cfg.adam, lr)?;
                pending = 0;
                if !params.all_finite() {
                    return Err(ProtoError::NonFinite(format!(
                        "parameters after step {}",
                        state.t
                    )));
                }
            }
        }
        if let Some(m) = log.epoch_means().last() {
            log::info!("epoch {epoch}: mean loss {m:.4}");
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        steps: state.t,
    })
}

fn accumulate(acc: &mut Option<Gradients<f32>>, grads: Gradients<f32>) {
    match acc {
        None => *acc = Some(grads),
        Some(a) => {
            for (name, g) in grads {
                match a.get_mut(&name) {
                    Some(t) => t
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(x, y)| *x += y),
                    None => {
                        a.insert(name, g);
                    }
                }
            }
        }
    }
}
