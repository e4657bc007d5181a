use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::ProtoError;
use crate::tensor::{Gradients, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub peak_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Share of the total step count spent in linear warmup.
    pub warmup_frac: f64,
    /// Rescales the gradient to this global L2 norm when it is larger.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            peak_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            warmup_frac: 0.1,
            clip_norm: None,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), ProtoError> {
        let ok = self.peak_lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.warmup_frac)
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(ProtoError::Config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }

    /// Warmup length for a run of `total` steps.
    pub fn warmup_steps(&self, total: u64) -> u64 {
        let w = (self.warmup_frac * total as f64).round() as u64;
        if total >= 2 {
            w.clamp(1, total - 1)
        } else {
            0
        }
    }
}

/// Learning rate at 1-based step `t`: linear rise to `peak` over `warmup`
/// steps, then linear decay to zero at `total`. Steps past `total` get zero.
pub fn lr_schedule(t: u64, warmup: u64, total: u64, peak: f64) -> f64 {
    if t == 0 || t > total {
        return 0.0;
    }
    if t <= warmup {
        return peak * t as f64 / warmup as f64;
    }
    let left = (total - t) as f64;
    let span = (total - warmup).max(1) as f64;
    (peak * left / span).max(0.0)
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub m: IndexMap<String, Vec<f64>>,
    pub v: IndexMap<String, Vec<f64>>,
    pub t: u64,
}

/// One bias-corrected Adam update. Parameters without a gradient are left
/// untouched but still share the step counter.
pub fn adam_step(
    params: &mut ParamStore<f32>,
    grads: &Gradients<f32>,
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<(), ProtoError> {
    state.t += 1;
    let t = state.t as i32;
    let scale = match cfg.clip_norm {
        Some(c) => {
            let norm = grads
                .values()
                .flat_map(|g| g.data())
                .map(|&x| f64::from(x) * f64::from(x))
                .sum::<f64>()
                .sqrt();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, w) in params.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        if g.shape() != w.shape() {
            return Err(ProtoError::Shape(format!(
                "gradient for {name} has shape {:?}, parameter {:?}",
                g.shape(),
                w.shape()
            )));
        }
        let n = w.numel();
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; n]);
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; n]);
        for (((wi, &gi), mi), vi) in w
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            let gi = f64::from(gi) * scale;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let step = lr * (*mi / bc1) / ((*vi / bc2).sqrt() + cfg.eps);
            *wi = (f64::from(*wi) - step) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn schedule_shape() {
        let (w, s, p) = (10, 100, 1e-4);
        assert!((lr_schedule(1, w, s, p) - p / 10.0).abs() < 1e-18);
        assert!((lr_schedule(10, w, s, p) - p).abs() < 1e-18);
        assert!((lr_schedule(55, w, s, p) - p * 0.5).abs() < 1e-18);
        assert_eq!(lr_schedule(100, w, s, p), 0.0);
        assert_eq!(lr_schedule(101, w, s, p), 0.0);
        let mut prev = 0.0;
        for t in 1..=w {
            let lr = lr_schedule(t, w, s, p);
            assert!(lr > prev);
            prev = lr;
        }
        for t in w + 1..=s {
            let lr = lr_schedule(t, w, s, p);
            assert!(lr <= prev && lr >= 0.0);
            prev = lr;
        }
        let cfg = AdamConfig::default();
        assert_eq!(cfg.warmup_steps(1000), 100);
        assert_eq!(cfg.warmup_steps(3), 1);
    }

    fn scalar_store(x: f32) -> ParamStore<f32> {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(x)).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig::default();
        let mut p = scalar_store(0.0);
        let mut grads = Gradients::new();
        grads.insert("w".to_string(), Tensor::scalar(1.0f32));
        let mut st = AdamState::default();
        adam_step(&mut p, &grads, &mut st, &cfg, 1e-3).unwrap();
        let w = f64::from(p.get("w").unwrap().item().unwrap());
        assert!((w + 1e-3 / (1.0 + 1e-6)).abs() < 1e-9, "{w}");
    }

    #[test]
    fn matches_hand_computed_steps() {
        let cfg = AdamConfig::default();
        let gs = [0.5f32, -2.0, 1.0];
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 1.0f64);
        let mut p = scalar_store(1.0);
        let mut st = AdamState::default();
        for (i, &g) in gs.iter().enumerate() {
            let t = (i + 1) as i32;
            let g64 = f64::from(g);
            m = 0.9 * m + 0.1 * g64;
            v = 0.999 * v + 0.001 * g64 * g64;
            w -= 0.01 * (m / (1.0 - 0.9f64.powi(t)))
                / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-6);
            let mut grads = Gradients::new();
            grads.insert("w".to_string(), Tensor::scalar(g));
            adam_step(&mut p, &grads, &mut st, &cfg, 0.01).unwrap();
            let got = f64::from(p.get("w").unwrap().item().unwrap());
            assert!((got - w).abs() < 1e-6, "step {t}: {got} vs {w}");
        }
        assert_eq!(st.t, 3);
    }

    #[test]
    fn clipping_rescales_large_gradients_only() {
        let run = |clip: Option<f64>, steps: &[[f32; 2]]| {
            let cfg = AdamConfig {
                clip_norm: clip,
                ..AdamConfig::default()
            };
            let mut p = ParamStore::new();
            p.insert("w", Tensor::vector(vec![0.0f32, 0.0])).unwrap();
            let mut st = AdamState::default();
            for g in steps {
                let mut grads = Gradients::new();
                grads.insert("w".to_string(), Tensor::vector(g.to_vec()));
                adam_step(&mut p, &grads, &mut st, &cfg, 0.01).unwrap();
            }
            p.get("w").unwrap().data().to_vec()
        };
        // Norm 5 is clipped to 1; norm 0.5 passes through.
        let clipped = run(Some(1.0), &[[3.0, 4.0], [0.3, 0.4], [-0.1, 0.2]]);
        let manual = run(None, &[[0.6, 0.8], [0.3, 0.4], [-0.1, 0.2]]);
        for (a, b) in clipped.iter().zip(&manual) {
            assert!((a - b).abs() < 1e-7, "{clipped:?} vs {manual:?}");
        }
        assert_ne!(
            run(None, &[[3.0, 4.0], [0.3, 0.4]]),
            run(Some(1.0), &[[3.0, 4.0], [0.3, 0.4]])
        );
        assert!(AdamConfig {
            clip_norm: Some(0.0),
            ..AdamConfig::default()
        }
        .validate()
        .is_err());
    }
}
