use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::EnvConfig;
use crate::neural::{EpnDims, SampleMode};
use crate::par::ExecMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialise error: {0}")]
    Serialise(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Network size; `None` fields take the full-size default for the encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub enc_hidden: Option<usize>,
    pub enc_out: Option<usize>,
    pub heads: Option<usize>,
    pub head_dim: Option<usize>,
    pub mlp: Option<usize>,
    pub lstm: Option<usize>,
}

impl NetConfig {
    pub fn dims(&self, env: &EnvConfig) -> EpnDims {
        let d = EpnDims::for_encoding(&env.encoding);
        let heads = self.heads.unwrap_or(d.heads);
        let head_dim = self.head_dim.unwrap_or(d.head_dim);
        EpnDims {
            enc_hidden: self.enc_hidden.unwrap_or(d.enc_hidden),
            enc_out: self.enc_out.unwrap_or(d.enc_out),
            heads,
            head_dim,
            embed: heads * head_dim,
            mlp: self.mlp.unwrap_or(d.mlp),
            lstm: self.lstm.unwrap_or(d.lstm),
            ..d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Environments stepped in lockstep.
    pub batch: usize,
    pub unroll: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub entropy_coef_final: f64,
    pub learning_rate: f64,
    pub learning_rate_final: f64,
    pub max_grad_norm: f64,
    pub gamma: f64,
    /// Environment steps summed over the batch.
    pub total_steps: u64,
    /// Second phase resumed from the first, with its own schedules.
    pub finetune_steps: u64,
    pub finetune_gamma: f64,
    /// Updates between evaluations; 0 disables.
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Updates between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub memory_enabled: bool,
    pub exec: ExecMode,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch: 8,
            unroll: 20,
            value_coef: 0.5,
            entropy_coef: 0.1,
            entropy_coef_final: 0.0,
            learning_rate: 7.5e-4,
            learning_rate_final: 0.0,
            max_grad_norm: 100.0,
            gamma: 0.7,
            total_steps: 1_000_000,
            finetune_steps: 0,
            finetune_gamma: 0.95,
            eval_every: 0,
            eval_episodes: 50,
            checkpoint_every: 0,
            memory_enabled: true,
            exec: ExecMode::default(),
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.batch == 0 || self.unroll == 0 {
            return Err(ConfigError::Invalid("batch and unroll must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.finetune_gamma) {
            return Err(ConfigError::Invalid("discounts must lie in [0, 1]".into()));
        }
        if self.learning_rate < 0.0 || self.learning_rate_final < 0.0 || self.max_grad_norm <= 0.0 {
            return Err(ConfigError::Invalid("learning rates must be >= 0 and the clip norm > 0".into()));
        }
        Ok(())
    }

    /// Updates in a phase of `steps` environment steps.
    pub fn updates_for(&self, steps: u64) -> u64 {
        steps / (self.batch * self.unroll) as u64
    }
}

/// Top-level file layout: `[train]` and `[env]` tables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFile {
    pub train: TrainConfig,
    pub env: EnvConfig,
}

impl TrainFile {
    pub fn from_toml(s: &str) -> Result<Self, ConfigError> {
        let f: TrainFile = toml::from_str(s)?;
        f.train.validate()?;
        f.env.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        TrainFile::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_episodes: usize,
    pub memory_enabled: bool,
    pub shaping: bool,
    pub mode: SampleMode,
    pub record_activations: bool,
    /// Seed of the evaluation set and of action sampling.
    pub seed: u64,
    pub exec: ExecMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_episodes: 200,
            memory_enabled: true,
            shaping: true,
            mode: SampleMode::Sample,
            record_activations: false,
            seed: 1_000_003,
            exec: ExecMode::default(),
        }
    }
}
