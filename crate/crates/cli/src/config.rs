//! Run configuration: a TOML file merged with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mcb_core::corpus::{GeneratorConfig, Split};
use mcb_core::model::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tau: f64,
    pub split: Split,
    pub k_list: Vec<usize>,
    pub bootstrap_b: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tau: 0.5,
            split: Split::Test,
            k_list: vec![1, 3, 5],
            bootstrap_b: 1000,
        }
    }
}

/// Pair set for CIM: TopC pairs or the full concept x label product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CimPairs {
    Topc,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretConfig {
    pub topc_k: usize,
    pub pairs: usize,
    pub bootstrap_b: usize,
    pub cim_pairs: CimPairs,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        InterpretConfig {
            topc_k: 5,
            pairs: 1000,
            bootstrap_b: 1000,
            cim_pairs: CimPairs::Topc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides every component seed.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub evaluation: EvalConfig,
    pub interpret: InterpretConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            out: PathBuf::from("runs/latest"),
            generator: GeneratorConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            evaluation: EvalConfig::default(),
            interpret: InterpretConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Pushes the global seed into every component.
    pub fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.generator.seed = s;
            self.model.seed = s;
            self.training.seed = s;
        }
    }

    /// The seed used by bootstrap and sampling steps.
    pub fn stat_seed(&self) -> u64 {
        self.seed.unwrap_or(self.training.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        let e = &self.evaluation;
        if !(e.tau > 0.0 && e.tau < 1.0) {
            bail!("evaluation.tau must lie in (0, 1), got {}", e.tau);
        }
        if e.bootstrap_b == 0 || self.interpret.bootstrap_b == 0 {
            bail!("bootstrap_b must be positive");
        }
        if e.k_list.contains(&0) {
            bail!("k_list entries must be positive");
        }
        if self.interpret.topc_k == 0 || self.interpret.pairs == 0 {
            bail!("interpret.topc_k and interpret.pairs must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serialising resolved config")
    }
}
