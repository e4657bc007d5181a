//! Post-norm transformer encoder over token ids with learned absolute
//! positions, mean pooling over program tokens, and a bag-of-words side
//! encoder.
//!
//! A batch of sequences is laid out as one tall matrix: every dense layer runs
//! on all rows at once, while attention is computed per sequence segment.
//! Pad ids are removed before encoding, so no attention mask is needed and pad
//! positions cannot influence the result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{EncoderConfig, EncoderError, FusionMode};
use crate::lexnorm::{TokenId, PAD_ID};
use crate::tensor::{BoundParams, Graph, ParamStore, Real, Tensor, Var};

/// Side-word id reserved for padding.
pub const SIDE_PAD: usize = 0;
/// Side-word id for words outside the side vocabulary.
pub const SIDE_UNK: usize = 1;

/// Dropout is drawn from the given generator only in training passes.
pub enum Pass<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// Result of [`Encoder::fuse_and_encode`].
pub struct Encoded {
    /// One pooled row per input sequence, `n x d_model`.
    pub pooled: Var,
    /// Attention probabilities for every layer, segment and head, in that order.
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
}

struct Segment {
    start: usize,
    len: usize,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self, EncoderError> {
        cfg.validate()?;
        Ok(Encoder { cfg })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Fresh parameters: normal(0, init_std) for tables and dense weights,
    /// zero biases, unit layer-norm gains. FiLM starts as the identity and
    /// adapter up-projections start at zero.
    pub fn init_params(&self, seed: u64) -> ParamStore<f32> {
        let c = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, c.init_std as f32).expect("validated std");
        let mut store = ParamStore::new();
        let mut put = |name: String, t: Tensor<f32>| store.insert(&name, t).expect("unique names");
        let mut randn = |rows: usize, cols: usize| {
            let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            Tensor::matrix(rows, cols, data).expect("sized")
        };
        let zeros = |rows: usize, cols: usize| Tensor::zeros(&[rows, cols]);
        let ones = |cols: usize| Tensor::filled(&[1, cols], 1.0f32);
        let (d, ds) = (c.d_model, c.side_dim);

        put("tok_emb".into(), randn(c.vocab_size + 1, d));
        put("pos_emb".into(), randn(c.max_len, d));
        // Drawn even when unused so shared tensors start identical across
        // fusion modes.
        let side_emb = randn(c.side_vocab_size, ds);
        if c.fusion.uses_side() {
            put("side_emb".into(), side_emb);
        }
        for l in 0..c.layers {
            for w in ["q", "k", "v", "o"] {
                put(format!("l{l}.w{w}"), randn(d, d));
                put(format!("l{l}.b{w}"), zeros(1, d));
            }
            put(format!("l{l}.ln1_g"), ones(d));
            put(format!("l{l}.ln1_b"), zeros(1, d));
            put(format!("l{l}.ff_w1"), randn(d, c.d_ff));
            put(format!("l{l}.ff_b1"), zeros(1, c.d_ff));
            put(format!("l{l}.ff_w2"), randn(c.d_ff, d));
            put(format!("l{l}.ff_b2"), zeros(1, d));
            put(format!("l{l}.ln2_g"), ones(d));
            put(format!("l{l}.ln2_b"), zeros(1, d));
            match c.fusion {
                FusionMode::Film => {
                    put(format!("l{l}.film_w"), zeros(ds, 4 * d));
                    let mut b = vec![0.0f32; 4 * d];
                    b[..d].fill(1.0);
                    b[2 * d..3 * d].fill(1.0);
                    put(
                        format!("l{l}.film_b"),
                        Tensor::matrix(1, 4 * d, b).expect("sized"),
                    );
                }
                FusionMode::Adapter => {
                    for s in 1..=2 {
                        put(format!("l{l}.ad{s}_down_h"), randn(d, c.adapter_dim));
                        put(format!("l{l}.ad{s}_down_s"), randn(ds, c.adapter_dim));
                        put(format!("l{l}.ad{s}_down_b"), zeros(1, c.adapter_dim));
                        put(format!("l{l}.ad{s}_up"), zeros(c.adapter_dim, d));
                        put(format!("l{l}.ad{s}_up_b"), zeros(1, d));
                    }
                }
                _ => {}
            }
        }
        match c.fusion {
            FusionMode::TaskToken => {
                put("task_w".into(), randn(ds, d));
                put("task_b".into(), zeros(1, d));
            }
            FusionMode::Concat => {
                put("cat_w1_h".into(), randn(d, d));
                put("cat_w1_s".into(), randn(ds, d));
                put("cat_b1".into(), zeros(1, d));
                put("cat_w2".into(), randn(d, d));
                put("cat_b2".into(), zeros(1, d));
            }
            _ => {}
        }
        store
    }

    /// `g(prompt) + g(rubric)` as a `1 x side_dim` row, where `g` is the mean
    /// side-word embedding over non-pad ids and an empty input contributes zero.
    /// Without side fusion the row is all zeros.
    pub fn embed_side<S: Real>(
        &self,
        g: &mut Graph<S>,
        p: &BoundParams,
        prompt: &[usize],
        rubric: &[usize],
    ) -> Result<Var, EncoderError> {
        if !self.cfg.fusion.uses_side() {
            return Ok(g.constant(Tensor::zeros(&[1, self.cfg.side_dim])));
        }
        let parts: Vec<Var> = [prompt, rubric]
            .into_iter()
            .map(|ids| self.side_mean(g, p, ids))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .collect();
        match parts.as_slice() {
            [] => Err(EncoderError::EmptySide(self.cfg.fusion)),
            [one] => Ok(*one),
            [a, b] => Ok(g.add(*a, *b)?),
            _ => unreachable!(),
        }
    }

    fn side_mean<S: Real>(
        &self,
        g: &mut Graph<S>,
        p: &BoundParams,
        ids: &[usize],
    ) -> Result<Option<Var>, EncoderError> {
        let ids: Vec<usize> = ids.iter().copied().filter(|&i| i != SIDE_PAD).collect();
        if ids.is_empty() {
            return Ok(None);
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.cfg.side_vocab_size) {
            return Err(EncoderError::IdOutOfRange {
                id: bad as u32,
                vocab: self.cfg.side_vocab_size - 1,
            });
        }
        let rows = g.embedding_lookup(p.get("side_emb")?, &ids)?;
        let all = vec![true; ids.len()];
        Ok(Some(g.mean_over_mask(rows, &all)?))
    }

    /// Encodes a batch of id sequences into pooled embeddings.
    ///
    /// `side` must be a `1 x side_dim` row unless fusion is off; it is shared
    /// by every sequence in the batch.
    pub fn fuse_and_encode<S: Real>(
        &self,
        g: &mut Graph<S>,
        p: &BoundParams,
        batch: &[&[TokenId]],
        side: Option<Var>,
        pass: &mut Pass<'_>,
    ) -> Result<Encoded, EncoderError> {
        let c = &self.cfg;
        let side = match (c.fusion.uses_side(), side) {
            (false, _) => None,
            (true, Some(s)) => {
                let shape = g.value(s).shape();
                if g.value(s).rows() != 1 || g.value(s).cols() != c.side_dim {
                    return Err(crate::tensor::TensorError::ShapeMismatch {
                        op: "side",
                        left: shape.to_vec(),
                        right: vec![1, c.side_dim],
                    }
                    .into());
                }
                Some(s)
            }
            (true, None) => return Err(EncoderError::EmptySide(c.fusion)),
        };
        let task_token = c.fusion == FusionMode::TaskToken;

        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut lens = Vec::with_capacity(batch.len());
        for (i, seq) in batch.iter().enumerate() {
            let kept: Vec<TokenId> = seq.iter().copied().filter(|&t| t != PAD_ID).collect();
            if kept.is_empty() {
                return Err(EncoderError::EmptySequence(i));
            }
            let needed = kept.len() + usize::from(task_token);
            if needed > c.max_len {
                return Err(EncoderError::LengthOverflow {
                    len: needed,
                    max: c.max_len,
                });
            }
            if let Some(&bad) = kept.iter().find(|&&t| t == 0 || t as usize > c.vocab_size) {
                return Err(EncoderError::IdOutOfRange {
                    id: bad,
                    vocab: c.vocab_size,
                });
            }
            positions.extend(0..kept.len());
            ids.extend(kept.iter().map(|&t| t as usize));
            lens.push(kept.len());
        }
        if batch.is_empty() {
            return Err(EncoderError::EmptySequence(0));
        }

        let tok = g.embedding_lookup(p.get("tok_emb")?, &ids)?;
        let pos = g.embedding_lookup(p.get("pos_emb")?, &positions)?;
        let mut x = g.add(tok, pos)?;

        let mut segments = Vec::with_capacity(lens.len());
        if task_token {
            let side = side.expect("checked above");
            let proj = g.matmul(side, p.get("task_w")?)?;
            let row = g.add(proj, p.get("task_b")?)?;
            let mut parts = Vec::with_capacity(2 * lens.len());
            let (mut src, mut dst) = (0, 0);
            for &n in &lens {
                parts.push(row);
                parts.push(g.slice_rows(x, src, n)?);
                segments.push(Segment {
                    start: dst,
                    len: n + 1,
                });
                src += n;
                dst += n + 1;
            }
            x = g.concat(&parts, 0)?;
        } else {
            let mut start = 0;
            for &n in &lens {
                segments.push(Segment { start, len: n });
                start += n;
            }
        }
        x = self.dropout(g, x, pass);

        let mut attention = Vec::new();
        for l in 0..c.layers {
            x = self.layer(g, p, l, x, &segments, side, pass, &mut attention)?;
        }

        let total: usize = segments.iter().map(|s| s.len).sum();
        let mut pool = vec![S::zero(); segments.len() * total];
        for (i, s) in segments.iter().enumerate() {
            let skip = usize::from(task_token && !c.pool_task_token);
            let w = S::one() / S::from_usize(s.len - skip).unwrap();
            for r in s.start + skip..s.start + s.len {
                pool[i * total + r] = w;
            }
        }
        let pool = g.constant(Tensor::matrix(segments.len(), total, pool)?);
        let mut pooled = g.matmul(pool, x)?;

        if c.fusion == FusionMode::Concat {
            let side = side.expect("checked above");
            let h = g.matmul(pooled, p.get("cat_w1_h")?)?;
            let s = g.matmul(side, p.get("cat_w1_s")?)?;
            let s = g.add(s, p.get("cat_b1")?)?;
            let h = g.add(h, s)?;
            let h = g.gelu(h);
            let h = g.matmul(h, p.get("cat_w2")?)?;
            pooled = g.add(h, p.get("cat_b2")?)?;
        }
        Ok(Encoded { pooled, attention })
    }

    fn dropout<S: Real>(&self, g: &mut Graph<S>, x: Var, pass: &mut Pass<'_>) -> Var {
        match pass {
            Pass::Train(rng) => g.dropout(x, self.cfg.dropout, &mut **rng),
            Pass::Eval => x,
        }
    }

    fn linear<S: Real>(
        &self,
        g: &mut Graph<S>,
        p: &BoundParams,
        x: Var,
        w: &str,
        b: &str,
    ) -> Result<Var, EncoderError> {
        let y = g.matmul(x, p.get(w)?)?;
        Ok(g.add(y, p.get(b)?)?)
    }

    #[allow(clippy::too_many_arguments)]
    fn layer<S: Real>(
        &self,
        g: &mut Graph<S>,
        p: &BoundParams,
        l: usize,
        x: Var,
        segments: &[Segment],
        side: Option<Var>,
        pass: &mut Pass<'_>,
        attention: &mut Vec<Var>,
    ) -> Result<Var, EncoderError> {
        let c = &self.cfg;
        let d = c.d_model;
        let dh = d / c.heads;
        let q = self.linear(g, p, x, &format!("l{l}.wq"), &format!("l{l}.bq"))?;
        let k = self.linear(g, p, x, &format!("l{l}.wk"), &format!("l{l}.bk"))?;
        let v = self.linear(g, p, x, &format!("l{l}.wv"), &format!("l{l}.bv"))?;
        let scale = S::one() / S::from_usize(dh).unwrap().sqrt();

        let mut ctx_parts = Vec::with_capacity(segments.len());
        for s in segments {
            let (qs, ks, vs) = if segments.len() == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_rows(q, s.start, s.len)?,
                    g.slice_rows(k, s.start, s.len)?,
                    g.slice_rows(v, s.start, s.len)?,
                )
            };
            let mut heads = Vec::with_capacity(c.heads);
            for h in 0..c.heads {
                let (qh, kh, vh) = if c.heads == 1 {
                    (qs, ks, vs)
                } else {
                    (
                        g.slice_cols(qs, h * dh, dh)?,
                        g.slice_cols(ks, h * dh, dh)?,
                        g.slice_cols(vs, h * dh, dh)?,
                    )
                };
                let scores = g.matmul_nt(qh, kh)?;
                let scores = g.scale(scores, scale);
                let probs = g.softmax(scores, 1)?;
                attention.push(probs);
                heads.push(g.matmul(probs, vh)?);
            }
            ctx_parts.push(if heads.len() == 1 {
                heads[0]
            } else {
                g.concat(&heads, 1)?
            });
        }
        let ctx = if ctx_parts.len() == 1 {
            ctx_parts[0]
        } else {
            g.concat(&ctx_parts, 0)?
        };

        let film = match (c.fusion, side) {
            (FusionMode::Film, Some(s)) => {
                let gb = self.linear(g, p, s, &format!("l{l}.film_w"), &format!("l{l}.film_b"))?;
                Some([
                    g.slice_cols(gb, 0, d)?,
                    g.slice_cols(gb, d, d)?,
                    g.slice_cols(gb, 2 * d, d)?,
                    g.slice_cols(gb, 3 * d, d)?,
                ])
            }
            _ => None,
        };

        let mut a = self.linear(g, p, ctx, &format!("l{l}.wo"), &format!("l{l}.bo"))?;
        a = self.side_transform(g, p, l, 1, a, side, film.map(|f| (f[0], f[1])))?;
        a = self.dropout(g, a, pass);
        let r = g.add(x, a)?;
        let eps = S::lit(c.ln_eps);
        let h = g.layer_norm(
            r,
            p.get(&format!("l{l}.ln1_g"))?,
            p.get(&format!("l{l}.ln1_b"))?,
            1,
            eps,
        )?;

        let f = self.linear(g, p, h, &format!("l{l}.ff_w1"), &format!("l{l}.ff_b1"))?;
        let f = g.gelu(f);
        let mut f = self.linear(g, p, f, &format!("l{l}.ff_w2"), &format!("l{l}.ff_b2"))?;
        f = self.side_transform(g, p, l, 2, f, side, film.map(|f| (f[2], f[3])))?;
        f = self.dropout(g, f, pass);
        let r = g.add(h, f)?;
        Ok(g.layer_norm(
            r,
            p.get(&format!("l{l}.ln2_g"))?,
            p.get(&format!("l{l}.ln2_b"))?,
            1,
            eps,
        )?)
    }

    /// Applies FiLM or the adapter to the output of dense sublayer `which`.
    #[allow(clippy::too_many_arguments)]
    fn side_transform<S: Real>(
        &self,
        g: &mut Graph<S>,
        p: &BoundParams,
        l: usize,
        which: usize,
        h: Var,
        side: Option<Var>,
        film: Option<(Var, Var)>,
    ) -> Result<Var, EncoderError> {
        match (self.cfg.fusion, side) {
            (FusionMode::Film, Some(_)) => {
                let (gamma, beta) = film.expect("film params computed");
                let y = g.mul(h, gamma)?;
                Ok(g.add(y, beta)?)
            }
            (FusionMode::Adapter, Some(s)) => {
                let pre = format!("l{l}.ad{which}");
                let dh = g.matmul(h, p.get(&format!("{pre}_down_h"))?)?;
                let ds =
                    self.linear(g, p, s, &format!("{pre}_down_s"), &format!("{pre}_down_b"))?;
                let z = g.add(dh, ds)?;
                let z = g.gelu(z);
                let up = self.linear(g, p, z, &format!("{pre}_up"), &format!("{pre}_up_b"))?;
                Ok(g.add(h, up)?)
            }
            _ => Ok(h),
        }
    }
}
