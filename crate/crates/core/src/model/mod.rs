//! Mini transformer classifier with two independently configurable dropout
//! sites: attention probabilities and feed-forward hidden activations.

mod checkpoint;
mod transformer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::check_rate;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub(crate) use transformer::{batch_logits, is_norm_or_bias, probs_from_logits, ParamVars, Sites};
pub use transformer::{
    build, forward, parameter_count, parameter_shapes, position_logits, ClassProbs, TokenMatrix,
};

/// Token id reserved for padding. Trailing pads are stripped before a forward.
pub const PAD_ID: usize = 0;

/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-5;

/// A named pair of inference-time dropout rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    pub name: String,
    pub attention_rate: f64,
    pub ffn_rate: f64,
}

impl DropoutConfig {
    pub fn new(name: impl Into<String>, attention_rate: f64, ffn_rate: f64) -> Result<Self> {
        let cfg = Self {
            name: name.into(),
            attention_rate,
            ffn_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invalid("dropout config needs a name"));
        }
        check_rate(self.attention_rate)?;
        check_rate(self.ffn_rate)
    }

    fn preset(name: &str, attention_rate: f64, ffn_rate: f64) -> Self {
        Self {
            name: name.to_owned(),
            attention_rate,
            ffn_rate,
        }
    }

    pub fn deterministic() -> Self {
        Self::preset("deterministic", 0.0, 0.0)
    }

    pub fn baseline() -> Self {
        Self::preset("baseline", 0.1, 0.1)
    }

    pub fn high_attention() -> Self {
        Self::preset("high_attention", 0.6, 0.1)
    }

    pub fn high_ffn() -> Self {
        Self::preset("high_ffn", 0.1, 0.6)
    }

    pub fn high_both() -> Self {
        Self::preset("high_both", 0.6, 0.6)
    }

    /// The five standard configurations, in table order.
    pub fn presets() -> Vec<Self> {
        vec![
            Self::deterministic(),
            Self::baseline(),
            Self::high_attention(),
            Self::high_ffn(),
            Self::high_both(),
        ]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::presets().into_iter().find(|c| c.name == name)
    }

    /// Human label used in tables, e.g. `High Both (0.6/0.6)`.
    pub fn display_label(&self) -> String {
        let title = match self.name.as_str() {
            "deterministic" => "Deterministic".to_owned(),
            "baseline" => "Baseline".to_owned(),
            "high_attention" => "High Attention".to_owned(),
            "high_ffn" => "High FFN".to_owned(),
            "high_both" => "High Both".to_owned(),
            other => other.to_owned(),
        };
        format!("{title} ({:.1}/{:.1})", self.attention_rate, self.ffn_rate)
    }

    /// Whether any dropout site is live.
    pub fn is_stochastic(&self) -> bool {
        self.attention_rate > 0.0 || self.ffn_rate > 0.0
    }

    pub fn mode(&self) -> EvalMode {
        if self.is_stochastic() {
            EvalMode::Stochastic
        } else {
            EvalMode::Deterministic
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Encoder,
    Decoder,
}

impl Family {
    pub fn is_causal(self) -> bool {
        self == Family::Decoder
    }

    pub fn default_pooling(self) -> Pooling {
        match self {
            Family::Encoder => Pooling::Cls,
            Family::Decoder => Pooling::LastToken,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Encoder => "encoder",
            Family::Decoder => "decoder",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(Family::Encoder),
            "decoder" => Ok(Family::Decoder),
            other => Err(Error::invalid(format!("unknown model family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Cls,
    Mean,
    LastToken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub pooling: Pooling,
    /// Standard deviation of the truncated-normal draw for embeddings and
    /// projection weights.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

/// Conventional weight scale for transformer initialization.
pub const DEFAULT_INIT_STD: f64 = 0.02;

fn default_init_std() -> f64 {
    DEFAULT_INIT_STD
}

impl ModelConfig {
    /// Config with the family's default pooling.
    pub fn new(
        family: Family,
        layers: usize,
        heads: usize,
        d_model: usize,
        d_ffn: usize,
        vocab_size: usize,
        max_seq_len: usize,
    ) -> Self {
        Self {
            family,
            layers,
            heads,
            d_model,
            d_ffn,
            vocab_size,
            max_seq_len,
            pooling: family.default_pooling(),
            init_std: DEFAULT_INIT_STD,
        }
    }

    /// The small model used for desk-scale sweeps: 4 layers, 4 heads,
    /// width 96, feed-forward 192, fan-in weight scale `1/sqrt(d_model)`.
    pub fn desk(family: Family, vocab_size: usize, max_seq_len: usize) -> Self {
        let mut cfg = Self::new(family, 4, 4, 96, 192, vocab_size, max_seq_len);
        cfg.init_std = cfg.fan_in_std();
        cfg
    }

    pub fn fan_in_std(&self) -> f64 {
        1.0 / (self.d_model as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_ffn", self.d_ffn),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(Error::invalid(format!(
                "init_std {} must be finite and positive",
                self.init_std
            )));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}
