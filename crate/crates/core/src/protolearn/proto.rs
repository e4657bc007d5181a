use serde::{Deserialize, Serialize};

use super::ProtoError;
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    SquaredEuclidean,
    Euclidean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Softmax temperature, or its initial value when learned.
    pub tau: f64,
    /// Learn `log tau` jointly with the encoder.
    pub learn_tau: bool,
    pub distance: Distance,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 1.0,
            learn_tau: false,
            distance: Distance::SquaredEuclidean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ProtoError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ProtoError::Config("loss.tau must be positive".into()));
        }
        Ok(())
    }
}

/// Class prototypes, indexed by class id.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    pub protos: Vec<Vec<f64>>,
}

/// Mean support embedding of every class `0..n_classes`.
pub fn compute_prototypes(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
) -> Result<PrototypeSet, ProtoError> {
    let d = embeddings.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; d]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (e, &c) in embeddings.iter().zip(labels) {
        if c >= n_classes || e.len() != d {
            return Err(ProtoError::Shape(format!(
                "support row with class {c} and dim {}",
                e.len()
            )));
        }
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(e) {
            *s += v;
        }
    }
    for (c, (s, n)) in sums.iter_mut().zip(&counts).enumerate() {
        if *n == 0 {
            return Err(ProtoError::EmptyClass(c));
        }
        s.iter_mut().for_each(|v| *v /= *n as f64);
    }
    Ok(PrototypeSet { protos: sums })
}

pub fn distance(a: &[f64], b: &[f64], kind: Distance) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    match kind {
        Distance::SquaredEuclidean => sq,
        Distance::Euclidean => sq.sqrt(),
    }
}

fn log_probs(distances: &[f64], tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = distances.iter().map(|d| -d / tau).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Negative log-probability of `class` under the softmax over negative
/// distances divided by `tau`.
pub fn proto_loss(
    protos: &PrototypeSet,
    query: &[f64],
    class: usize,
    tau: f64,
    kind: Distance,
) -> Result<f64, ProtoError> {
    if class >= protos.protos.len() {
        return Err(ProtoError::Shape(format!(
            "class {class} of {}",
            protos.protos.len()
        )));
    }
    let d: Vec<f64> = protos
        .protos
        .iter()
        .map(|p| distance(query, p, kind))
        .collect();
    let loss = -log_probs(&d, tau)[class];
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(ProtoError::NonFinite("prototype loss".into()))
    }
}

/// Nearest prototype (lowest id on exact ties) and the class probabilities.
pub fn predict(
    protos: &PrototypeSet,
    embedding: &[f64],
    tau: f64,
    kind: Distance,
) -> (usize, Vec<f64>) {
    let d: Vec<f64> = protos
        .protos
        .iter()
        .map(|p| distance(embedding, p, kind))
        .collect();
    let mut best = 0;
    for (c, v) in d.iter().enumerate() {
        if *v < d[best] {
            best = c;
        }
    }
    (best, log_probs(&d, tau).into_iter().map(f64::exp).collect())
}

/// `n_classes x d` prototypes of `support` rows on the graph.
pub fn prototypes_graph<S: Real>(
    g: &mut Graph<S>,
    support: Var,
    labels: &[usize],
    n_classes: usize,
) -> Result<Var, ProtoError> {
    let mut counts = vec![0usize; n_classes];
    for &c in labels {
        if c >= n_classes {
            return Err(ProtoError::Shape(format!(
                "label {c} of {n_classes} classes"
            )));
        }
        counts[c] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(ProtoError::EmptyClass(c));
    }
    let ns = labels.len();
    let mut avg = vec![S::zero(); n_classes * ns];
    for (i, &c) in labels.iter().enumerate() {
        avg[c * ns + i] = S::one() / S::from_usize(counts[c]).unwrap();
    }
    let avg = g.constant(Tensor::matrix(n_classes, ns, avg)?);
    Ok(g.matmul(avg, support)?)
}

/// Logits `-dist(query, prototype) / tau` as an `nq x n_classes` matrix.
pub fn logits_graph<S: Real>(
    g: &mut Graph<S>,
    query: Var,
    protos: Var,
    cfg: &LossConfig,
    log_tau: Option<Var>,
) -> Result<Var, ProtoError> {
    let mut d = g.squared_distance(query, protos)?;
    if cfg.distance == Distance::Euclidean {
        // Keeps the derivative finite when a query sits on a prototype.
        let shape = g.value(d).shape().to_vec();
        let eps = g.constant(Tensor::filled(&shape, S::lit(1e-12)));
        let shifted = g.add(d, eps)?;
        d = g.sqrt(shifted);
    }
    Ok(match log_tau {
        Some(lt) => {
            let neg = g.scale(lt, -S::one());
            let inv = g.exp(neg);
            let scaled = g.scale_by(d, inv)?;
            g.scale(scaled, -S::one())
        }
        None => g.scale(d, S::lit(-1.0 / cfg.tau)),
    })
}

/// Mean over queries of the negative log-probability of the true class.
pub fn episode_loss_graph<S: Real>(
    g: &mut Graph<S>,
    support: Var,
    support_labels: &[usize],
    query: Var,
    query_labels: &[usize],
    n_classes: usize,
    cfg: &LossConfig,
    log_tau: Option<Var>,
) -> Result<Var, ProtoError> {
    let protos = prototypes_graph(g, support, support_labels, n_classes)?;
    let logits = logits_graph(g, query, protos, cfg, log_tau)?;
    let lp = g.log_softmax(logits);
    let picked = g.pick_mean(lp, query_labels)?;
    Ok(g.scale(picked, -S::one()))
}
