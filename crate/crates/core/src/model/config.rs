use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::AdamWConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Multiplicative concept bottleneck.
    Mcb,
    /// Additive bottleneck through scalar concept activations.
    Vcbm,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcb" => Ok(ModelKind::Mcb),
            "vcbm" => Ok(ModelKind::Vcbm),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Align term dropped from the objective.
    NoAlign,
    /// `p_c` replaced by `p_t`.
    NoCrossattn,
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_align" => Ok(Ablation::NoAlign),
            "no_crossattn" => Ok(Ablation::NoCrossattn),
            other => Err(Error::Config(format!("unknown ablation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Filled in from the token vocabulary when a model is built.
    pub vocab_size: usize,
    pub h: usize,
    pub layers: usize,
    pub heads: usize,
    /// Longest input including `[CLS]`.
    pub max_len: usize,
    /// Feed-forward width; 0 means `2h`.
    pub ffn: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            h: 64,
            layers: 2,
            heads: 4,
            max_len: 128,
            ffn: 0,
        }
    }
}

impl EncoderConfig {
    pub fn ffn_width(&self) -> usize {
        if self.ffn == 0 {
            2 * self.h
        } else {
            self.ffn
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub ablation: Ablation,
    pub encoder: EncoderConfig,
    /// Gate hidden width d_g; 0 means `h`.
    pub gate_hidden: usize,
    pub ln_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Mcb,
            ablation: Ablation::Full,
            encoder: EncoderConfig::default(),
            gate_hidden: 0,
            ln_eps: 1e-5,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn gate_width(&self) -> usize {
        if self.gate_hidden == 0 {
            self.encoder.h
        } else {
            self.gate_hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.h < 2 || e.heads == 0 || !e.h.is_multiple_of(e.heads) {
            return Err(Error::Config(format!(
                "hidden width {} must be at least 2 and divisible by {} heads",
                e.h, e.heads
            )));
        }
        if e.max_len < 2 {
            return Err(Error::Config("max_len must allow [CLS] plus one token".into()));
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        if self.kind == ModelKind::Vcbm && self.ablation == Ablation::NoCrossattn {
            return Err(Error::Config("no_crossattn applies to mcb only".into()));
        }
        Ok(())
    }
}

/// Weights of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub diag: f64,
    pub align: f64,
    pub concept: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            diag: 2.0,
            align: 0.5,
            concept: 0.3,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.diag < 0.0 || self.align < 0.0 || self.concept < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Decision threshold for validation F1.
    pub tau: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossWeights::default(),
            epochs: 10,
            batch_size: 8,
            optimizer: AdamWConfig::default(),
            tau: 0.5,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.optimizer.lr < 0.0 {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        Ok(())
    }
}
