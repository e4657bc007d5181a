use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport, MetricSet, TaskRow, POSITIVE_CLASS};
use crate::encoder::{Encoder, EncoderConfig, FusionMode, Pass};
use crate::lexnorm::TokenId;
use crate::protolearn::{adam_step, AdamConfig, AdamState, EpisodeBatch, Featurizer, ProtoError};
use crate::rng::{derive_seed, rng_for};
use crate::taskforge::{sample_episode, Task};
use crate::tensor::{BoundParams, Graph, ParamStore, Tensor, Var};

use super::eval::eval_episode_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Full-batch passes over the support set.
    pub steps: usize,
    pub lr: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            steps: 25,
            lr: 1e-3,
        }
    }
}

struct Classifier {
    encoder: Encoder,
}

impl Classifier {
    fn new(cfg: &EncoderConfig) -> Result<Self, EvalError> {
        let cfg = EncoderConfig {
            fusion: FusionMode::None,
            ..cfg.clone()
        };
        Ok(Classifier {
            encoder: Encoder::new(cfg).map_err(ProtoError::from)?,
        })
    }

    fn init(&self, seed: u64) -> ParamStore<f32> {
        let mut p = self.encoder.init_params(seed);
        let d = self.encoder.config().d_model;
        let std = self.encoder.config().init_std as f32;
        let mut rng = rng_for(seed, &[7]);
        let w: Vec<f32> = (0..d)
            .map(|_| {
                let z: f32 = StandardNormal.sample(&mut rng);
                std * z
            })
            .collect();
        p.insert("head_w", Tensor::matrix(d, 1, w).expect("shape"))
            .expect("fresh");
        p.insert("head_b", Tensor::zeros(&[1, 1])).expect("fresh");
        p
    }

    /// Log-probabilities `[n, 2]` from a single logit against a fixed zero.
    fn log_probs(
        &self,
        g: &mut Graph<f32>,
        p: &BoundParams,
        seqs: &[Vec<TokenId>],
        pass: &mut Pass<'_>,
    ) -> Result<Var, EvalError> {
        let refs: Vec<&[TokenId]> = seqs.iter().map(Vec::as_slice).collect();
        let enc = self
            .encoder
            .fuse_and_encode(g, p, &refs, None, pass)
            .map_err(ProtoError::from)?;
        let z = g.matmul(enc.pooled, p.get("head_w")?)?;
        let z = g.add(z, p.get("head_b")?)?;
        let zeros = g.constant(Tensor::zeros(&[seqs.len(), 1]));
        let logits = g.concat(&[zeros, z], 1)?;
        Ok(g.log_softmax(logits))
    }
}

/// Trains a fresh classifier on the support set of one featurized episode and
/// returns the positive-class probability of every query.
pub fn baseline_scores(
    enc_cfg: &EncoderConfig,
    batch: &EpisodeBatch,
    cfg: &BaselineConfig,
    seed: u64,
) -> Result<Vec<f64>, EvalError> {
    let clf = Classifier::new(enc_cfg)?;
    let mut params = clf.init(seed);
    let mut state = AdamState::default();
    let adam = AdamConfig::default();
    let mut drop_rng = rng_for(seed, &[8]);
    for step in 0..cfg.steps {
        let mut g = Graph::<f32>::new();
        let p = params.bind(&mut g);
        let lp = clf.log_probs(&mut g, &p, &batch.support, &mut Pass::Train(&mut drop_rng))?;
        let picked = g.pick_mean(lp, &batch.support_labels)?;
        let loss = g.scale(picked, -1.0);
        let grads = g.backward(loss)?;
        if !g.value(loss).is_finite() {
            return Err(ProtoError::NonFinite(format!("baseline step {step}")).into());
        }
        adam_step(&mut params, &grads, &mut state, &adam, cfg.lr)?;
    }
    let mut g = Graph::<f32>::new();
    let p = params.bind(&mut g);
    let lp = clf.log_probs(&mut g, &p, &batch.query, &mut Pass::Eval)?;
    let v = g.value(lp);
    Ok((0..v.rows())
        .map(|r| f64::from(v.at(r, POSITIVE_CLASS)).exp())
        .collect())
}

/// Per-task supervised baseline on the same evaluation episodes as
/// [`super::eval_meta_test`].
pub fn supervised_baseline(
    enc_cfg: &EncoderConfig,
    featurizer: &Featurizer,
    tasks: &[Task],
    shots: usize,
    queries: usize,
    seeds: &[u64],
    cfg: &BaselineConfig,
) -> Result<EvalReport, EvalError> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for task in tasks {
            let ep_seed = eval_episode_seed(seed, &task.task_id);
            let ep = sample_episode(task, shots, queries, ep_seed)?;
            let batch = featurizer.episode_batch(&ep, None)?;
            let scores = baseline_scores(enc_cfg, &batch, cfg, derive_seed(ep_seed, &[3]))?;
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
        "supervised",
        shots,
        queries,
        seeds,
        tasks.len(),
        rows,
    ))
}
