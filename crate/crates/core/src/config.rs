//! Run configuration shared by the command line, the examples and the tests.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{EncoderConfig, FusionMode};
use crate::evalkit::{BaselineConfig, SplitMode};
use crate::lexnorm::LexConfig;
use crate::protolearn::{AdamConfig, FeaturizerConfig, LossConfig, TrainConfig};
use crate::taskforge::SynthConfig;

/// Encoder settings; the two vocabulary sizes are derived from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub max_len: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub fusion: FusionMode,
    pub adapter_dim: usize,
    pub side_dim: usize,
    pub pool_task_token: bool,
    pub init_std: f64,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let e = EncoderConfig::default();
        ModelConfig {
            max_len: e.max_len,
            d_model: e.d_model,
            layers: e.layers,
            heads: e.heads,
            d_ff: e.d_ff,
            dropout: e.dropout,
            fusion: e.fusion,
            adapter_dim: e.adapter_dim,
            side_dim: e.side_dim,
            pool_task_token: e.pool_task_token,
            init_std: e.init_std,
            ln_eps: e.ln_eps,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self, vocab_size: usize, side_vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            max_len: self.max_len,
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            d_ff: self.d_ff,
            dropout: self.dropout,
            fusion: self.fusion,
            adapter_dim: self.adapter_dim,
            ln_eps: self.ln_eps,
            side_vocab_size,
            side_dim: self.side_dim,
            pool_task_token: self.pool_task_token,
            init_std: self.init_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub k: usize,
    pub q: usize,
    pub split: SplitMode,
    pub split_fraction: f64,
    /// Seed of the held-out plan, kept fixed across run seeds.
    pub split_seed: u64,
    /// Draw a new plan for every run seed instead of using `split_seed`.
    pub redraw_split: bool,
    /// Augmented tasks added, as a share of the rubric task count.
    pub aug_ratio: f64,
}

impl TaskSection {
    pub fn plan_seed(&self, run_seed: u64) -> u64 {
        if self.redraw_split {
            run_seed
        } else {
            self.split_seed
        }
    }
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            k: 10,
            q: 10,
            split: SplitMode::HeldOutQuestion,
            split_fraction: 0.25,
            split_seed: 0,
            redraw_split: false,
            aug_ratio: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub grad_accum: usize,
    pub adam: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            grad_accum: t.grad_accum,
            adam: t.adam,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub seeds: Vec<u64>,
    pub degrade_shots: Vec<usize>,
    pub baseline: BaselineConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            seeds: vec![0, 1, 2],
            degrade_shots: vec![10, 5, 2, 1],
            baseline: BaselineConfig::default(),
        }
    }
}

/// Every knob of a run. Unknown keys are rejected when parsing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    /// Run seed: split, initialization, episodes and augmentation.
    pub seed: u64,
    pub data: SynthConfig,
    pub lex: LexConfig,
    pub tasks: TaskSection,
    pub features: FeaturizerConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, thiserror::Error)]
#[error("{key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| bad("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            k: self.tasks.k,
            q: self.tasks.q,
            seed: self.seed,
            adam: self.train.adam.clone(),
            grad_accum: self.train.grad_accum,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.tasks;
        if t.k == 0 || t.q == 0 {
            return Err(bad("tasks.k", "k and q must be positive"));
        }
        if !(t.split_fraction > 0.0 && t.split_fraction < 1.0) {
            return Err(bad("tasks.split_fraction", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&t.aug_ratio) {
            return Err(bad("tasks.aug_ratio", "must lie in [0, 1]"));
        }
        self.lex.validate().map_err(|m| bad("lex", m))?;
        if self.data.num_questions == 0
            || self.data.students_per_question == 0
            || self.data.num_exams == 0
        {
            return Err(bad(
                "data",
                "question, student and exam counts must be positive",
            ));
        }
        self.model
            .encoder(2, 2)
            .validate()
            .map_err(|e| bad("model", e.to_string()))?;
        self.loss
            .validate()
            .map_err(|e| bad("loss", e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| bad("train", e.to_string()))?;
        if self.eval.seeds.is_empty() {
            return Err(bad("eval.seeds", "at least one seed is required"));
        }
        if self.eval.degrade_shots.iter().any(|&s| s == 0 || s > t.k) {
            return Err(bad(
                "eval.degrade_shots",
                format!("shot counts must lie in 1..={}", t.k),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_hash() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let other = RunConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn unknown_and_invalid_keys() {
        let err = RunConfig::from_toml("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = RunConfig::from_toml("[tasks]\nsplit_fraction = 1.5\n").unwrap_err();
        assert_eq!(err.key, "tasks.split_fraction");
        let cfg =
            RunConfig::from_toml("[model]\nd_model = 32\nheads = 4\nfusion = \"task-token\"\n")
                .unwrap();
        assert_eq!(cfg.model.fusion, FusionMode::TaskToken);
    }
}
