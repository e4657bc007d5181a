use super::{episode_loss_graph, EpisodeBatch, LossConfig, ProtoError};
use crate::encoder::{Encoder, EncoderConfig, FusionMode, Pass};
use crate::lexnorm::TokenId;
use crate::tensor::{BoundParams, Graph, ParamStore, Real, Tensor, Var};

/// Encoder plus prototype loss settings.
#[derive(Clone, Debug)]
pub struct ProtoModel {
    pub encoder: Encoder,
    pub loss: LossConfig,
}

const EMBED_CHUNK: usize = 64;

impl ProtoModel {
    pub fn new(encoder: EncoderConfig, loss: LossConfig) -> Result<Self, ProtoError> {
        loss.validate()?;
        Ok(ProtoModel {
            encoder: Encoder::new(encoder)?,
            loss,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    /// Longest program id sequence the encoder accepts.
    pub fn max_program_ids(&self) -> usize {
        let c = self.config();
        if c.fusion == FusionMode::TaskToken {
            c.max_len - 1
        } else {
            c.max_len
        }
    }

    pub fn init_params(&self, seed: u64) -> ParamStore<f32> {
        let mut p = self.encoder.init_params(seed);
        if self.loss.learn_tau {
            p.insert("log_tau", Tensor::scalar(self.loss.tau.ln() as f32))
                .expect("fresh name");
        }
        p
    }

    pub fn tau(&self, params: &ParamStore<f32>) -> f64 {
        match params.get("log_tau") {
            Some(t) if self.loss.learn_tau => f64::from(t.data()[0]).exp(),
            _ => self.loss.tau,
        }
    }

    fn side<S: Real>(
        &self,
        g: &mut Graph<S>,
        p: &BoundParams,
        prompt: &[usize],
        rubric: &[usize],
    ) -> Result<Option<Var>, ProtoError> {
        if self.config().fusion.uses_side() {
            Ok(Some(self.encoder.embed_side(g, p, prompt, rubric)?))
        } else {
            Ok(None)
        }
    }

    /// Builds the episode loss on `g`. Support and query run through the
    /// encoder as one batch.
    pub fn episode_loss<S: Real>(
        &self,
        g: &mut Graph<S>,
        p: &BoundParams,
        batch: &EpisodeBatch,
        pass: &mut Pass<'_>,
    ) -> Result<Var, ProtoError> {
        let side = self.side(g, p, &batch.prompt, &batch.rubric)?;
        let seqs: Vec<&[TokenId]> = batch
            .support
            .iter()
            .chain(&batch.query)
            .map(Vec::as_slice)
            .collect();
        let enc = self.encoder.fuse_and_encode(g, p, &seqs, side, pass)?;
        let ns = batch.support.len();
        let support = g.slice_rows(enc.pooled, 0, ns)?;
        let query = g.slice_rows(enc.pooled, ns, batch.query.len())?;
        let log_tau = if self.loss.learn_tau {
            Some(p.get("log_tau")?)
        } else {
            None
        };
        episode_loss_graph(
            g,
            support,
            &batch.support_labels,
            query,
            &batch.query_labels,
            batch.n_classes,
            &self.loss,
            log_tau,
        )
    }

    /// Pooled embeddings in evaluation mode, computed in chunks.
    pub fn embed(
        &self,
        params: &ParamStore<f32>,
        seqs: &[Vec<TokenId>],
        prompt: &[usize],
        rubric: &[usize],
    ) -> Result<Vec<Vec<f64>>, ProtoError> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(EMBED_CHUNK) {
            let mut g = Graph::<f32>::new();
            let p = params.bind(&mut g);
            let side = self.side(&mut g, &p, prompt, rubric)?;
            let refs: Vec<&[TokenId]> = chunk.iter().map(Vec::as_slice).collect();
            let enc = self
                .encoder
                .fuse_and_encode(&mut g, &p, &refs, side, &mut Pass::Eval)?;
            let v = g.value(enc.pooled);
            for r in 0..v.rows() {
                out.push(v.row(r).iter().map(|&x| f64::from(x)).collect());
            }
        }
        Ok(out)
    }
}
