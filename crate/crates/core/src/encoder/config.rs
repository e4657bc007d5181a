use serde::{Deserialize, Serialize};

use super::EncoderError;

/// How side information enters the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    None,
    /// Projected side vector prepended as an extra, position-free row.
    TaskToken,
    /// Pooled output and side vector mixed by a two-layer network.
    Concat,
    /// Per-layer elementwise scale and shift of both dense sublayer outputs.
    Film,
    /// Per-sublayer bottleneck residual computed from the hidden state and side vector.
    Adapter,
}

impl FusionMode {
    pub const ALL: [FusionMode; 5] = [
        FusionMode::None,
        FusionMode::TaskToken,
        FusionMode::Concat,
        FusionMode::Film,
        FusionMode::Adapter,
    ];

    pub fn uses_side(self) -> bool {
        self != FusionMode::None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Largest token id; ids run over `1..=vocab_size`.
    pub vocab_size: usize,
    /// Maximum number of positions T.
    pub max_len: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub fusion: FusionMode,
    pub adapter_dim: usize,
    pub ln_eps: f64,
    /// Number of rows in the side-word table, including pad and unknown.
    pub side_vocab_size: usize,
    pub side_dim: usize,
    /// Include the task-token row in mean pooling.
    pub pool_task_token: bool,
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 512,
            max_len: 256,
            d_model: 64,
            layers: 2,
            heads: 4,
            d_ff: 256,
            dropout: 0.1,
            fusion: FusionMode::None,
            adapter_dim: 16,
            ln_eps: 1e-5,
            side_vocab_size: 256,
            side_dim: 64,
            pool_task_token: false,
            init_std: 0.02,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let fail = |m: &str| Err(EncoderError::Config(m.to_string()));
        if self.vocab_size == 0 {
            return fail("vocab_size must be positive");
        }
        if self.max_len < 2 {
            return fail("max_len must be at least 2");
        }
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail("d_model must be a positive multiple of heads");
        }
        if self.layers > 0 && self.d_ff == 0 {
            return fail("d_ff must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.ln_eps <= 0.0 {
            return fail("ln_eps must be positive");
        }
        if self.fusion == FusionMode::Adapter && self.adapter_dim == 0 {
            return fail("adapter_dim must be positive for adapter fusion");
        }
        if self.side_vocab_size < 2 || self.side_dim == 0 {
            return fail("side_vocab_size must be at least 2 and side_dim positive");
        }
        if !(self.init_std > 0.0) {
            return fail("init_std must be positive");
        }
        Ok(())
    }
}
