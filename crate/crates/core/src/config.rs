//! Engine configuration file.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncoderConfig;
use crate::engine::EngineParams;
use crate::eval::Tolerances;
use crate::interleave::{StrategyKind, DEFAULT_NS_WEIGHT};
use crate::policy::train::OptimizerKind;
use crate::policy::FeatureSpec;
use crate::schema::{sha256_hex, SchemaError, SchemaTag, CONFIG_SCHEMA, CURRENT_MAJOR};
use crate::timebase::{TimingConfig, TimingError};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "DUPLEX_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("timing: {0}")]
    Timing(#[from] TimingError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EchoConfig {
    pub factor: f64,
    pub delay_blocks: u64,
}

impl Default for EchoConfig {
    fn default() -> Self {
        EchoConfig {
            factor: 0.0,
            delay_blocks: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub suite: u64,
    pub init: u64,
    pub train: u64,
    pub dpo: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            suite: 7,
            init: 1,
            train: 2,
            dpo: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub hidden: usize,
    pub optimizer: OptimizerKind,
    pub log_every: usize,
    pub beta: f64,
    pub lambda: f64,
    pub ns_weight: f64,
    pub dpo_lr: f64,
    pub dpo_batch: usize,
    pub dpo_steps: usize,
    pub dpo_optimizer: OptimizerKind,
    pub dpo_clip_norm: Option<f64>,
    pub monitor_every: usize,
    /// Chance of labelling a harmless event as an interruption.
    pub interrupt_bias: f64,
    pub lag_max_blocks: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 0.01,
            batch: 256,
            steps: 3000,
            hidden: 16,
            optimizer: OptimizerKind::Adam,
            log_every: 100,
            beta: 0.1,
            lambda: 0.5,
            ns_weight: DEFAULT_NS_WEIGHT,
            dpo_lr: 1e-6,
            dpo_batch: 256,
            dpo_steps: 40,
            dpo_optimizer: OptimizerKind::Sgd,
            dpo_clip_norm: None,
            monitor_every: 10,
            interrupt_bias: 0.0,
            lag_max_blocks: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub schema: String,
    pub version: u32,
    pub timing: TimingConfig,
    pub encoder: EncoderConfig,
    pub strategy: StrategyKind,
    pub policy_path: Option<String>,
    pub tolerances: Tolerances,
    pub echo: EchoConfig,
    pub seeds: Seeds,
    pub features: FeatureSpec,
    pub grace_ms: u64,
    pub training: TrainingConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            schema: CONFIG_SCHEMA.to_string(),
            version: CURRENT_MAJOR,
            timing: TimingConfig::default(),
            encoder: EncoderConfig::default(),
            strategy: StrategyKind::default(),
            policy_path: None,
            tolerances: Tolerances::default(),
            echo: EchoConfig::default(),
            seeds: Seeds::default(),
            features: FeatureSpec::default(),
            grace_ms: 2000,
            training: TrainingConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: EngineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        SchemaTag {
            schema: self.schema.clone(),
            version: self.version,
        }
        .check(CONFIG_SCHEMA)?;
        self.timing.validate()?;
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let t = &self.training;
        if !(self.echo.factor >= 0.0 && self.echo.factor.is_finite()) {
            return bad("echo.factor must be a non-negative number");
        }
        if self.tolerances.window_blocks == 0 {
            return bad("tolerances.window_blocks must be positive");
        }
        if !(t.lr > 0.0) || !(t.dpo_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(t.beta > 0.0) {
            return bad("training.beta must be positive");
        }
        if t.hidden == 0 {
            return bad("training.hidden must be positive");
        }
        if !(0.0..=1.0).contains(&t.interrupt_bias) {
            return bad("training.interrupt_bias must lie in [0, 1]");
        }
        if self.encoder.tap_weights.iter().any(|w| !w.is_finite()) {
            return bad("encoder.tap_weights must be finite");
        }
        Ok(())
    }

    /// SHA-256 over the compact serialization of the resolved config.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    pub fn engine_params(&self) -> EngineParams {
        EngineParams {
            timing: self.timing,
            encoder: self.encoder,
            strategy: self.strategy,
            features: self.features,
            echo_delay_blocks: self.echo.delay_blocks,
        }
    }
}
