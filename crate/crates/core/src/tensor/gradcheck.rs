//! Finite-difference checking of analytic gradients in 64-bit shadow mode.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{BoundParams, ParamStore};
use super::TensorError;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates probed per tensor: the largest analytic entries first, the
    /// rest drawn at random.
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            coords_per_tensor: 6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst per-tensor relative error `|a - n| / max(|a|, |n|)` (norms over
    /// the probed coordinates).
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub coords_checked: usize,
}

/// Compares the analytic gradient of `loss_fn` with central differences.
///
/// `loss_fn` builds a scalar loss on a fresh `f64` graph from bound
/// parameters; it is evaluated once for the analytic pass and twice per probed
/// coordinate.
pub fn gradient_check<F>(
    params: &ParamStore<f32>,
    loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph<f64>, &BoundParams) -> Result<Var, TensorError>,
{
    let base = params.cast::<f64>();
    let eval = |store: &ParamStore<f64>| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let loss = loss_fn(&mut g, &bound)?;
        g.value(loss).item()
    };

    let mut g = Graph::new();
    let bound = base.bind(&mut g);
    let loss = loss_fn(&mut g, &bound)?;
    let analytic = g.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        coords_checked: 0,
    };
    let mut probe = base.clone();
    for (name, grad) in &analytic {
        let n = grad.numel();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > opts.coords_per_tensor {
            coords.sort_by(|&i, &j| {
                grad.data()[j]
                    .abs()
                    .total_cmp(&grad.data()[i].abs())
                    .then(i.cmp(&j))
            });
            let top = opts.coords_per_tensor / 2;
            let mut picked: Vec<usize> = coords[..top].to_vec();
            let rest = &coords[top..];
            for k in sample(&mut rng, rest.len(), opts.coords_per_tensor - top) {
                picked.push(rest[k]);
            }
            coords = picked;
        }
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for &c in &coords {
            let orig = probe.get(name).unwrap().data()[c];
            probe.get_mut(name).unwrap().data_mut()[c] = orig + opts.step;
            let up = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[c] = orig - opts.step;
            let down = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = grad.data()[c];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        report.coords_checked += coords.len();
        let rel = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-8);
        if rel > report.max_rel_error || report.worst_tensor.is_empty() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst_tensor = name.clone();
        }
    }
    Ok(report)
}
