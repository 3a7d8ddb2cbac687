//! Engine and provider configuration.
//!
//! Configuration lives in a TOML file (`version = "loca-config/1"`); command
//! line flags override it field by field. The engine half is snapshotted
//! into every session directory so a session can be resumed or replayed
//! under the exact settings that produced it.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::ReviewMode;
use crate::provider::RetryPolicy;

/// Version marker inside the config file.
pub const CONFIG_FORMAT: &str = "loca-config/1";

/// How the initial solution is produced and refined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    /// Step-structured solutions, parsed and validated.
    Structured,
    /// Free-prose solutions stored as a single-step chain.
    Generic,
}

/// Whether review prompts state the structured requirements or are plain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewPromptStyle {
    Structured,
    Plain,
}

/// Pipeline stages that issue provider calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Interpret,
    Augment,
    Review,
    Summarize,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Interpret => "interpret",
            Stage::Augment => "augment",
            Stage::Review => "review",
            Stage::Summarize => "summarize",
        }
    }
}

/// Per-stage overrides of model, temperature and output budget.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOverride {
    pub model: Option<String>,
    pub temperature: Option<f32>,
    pub max_output_tokens: Option<u32>,
}

/// The resolved request parameters for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    pub model_id: String,
    pub temperature: f32,
    pub max_output_tokens: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOverrides {
    #[serde(default)]
    pub interpret: StageOverride,
    #[serde(default)]
    pub augment: StageOverride,
    #[serde(default)]
    pub review: StageOverride,
    #[serde(default)]
    pub summarize: StageOverride,
}

fn default_true() -> bool {
    true
}

fn default_max_iterations() -> u32 {
    5
}

fn default_max_chain_steps() -> usize {
    200
}

fn default_repairs() -> u32 {
    2
}

fn default_model() -> String {
    "default".to_string()
}

/// Engine behavior: loop modes, budgets and per-stage parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default = "EngineConfig::default_review_mode")]
    pub review_mode: ReviewMode,
    #[serde(default = "EngineConfig::default_augment_mode")]
    pub augment_mode: AugmentMode,
    #[serde(default = "EngineConfig::default_review_prompt_style")]
    pub review_prompt_style: ReviewPromptStyle,
    /// Run the interpretation stage before the first augmentation.
    #[serde(default = "default_true")]
    pub interpretation: bool,
    /// Augment-and-review rounds before giving up.
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u32,
    /// Engine limit on chain length; not a protocol rule.
    #[serde(default = "default_max_chain_steps")]
    pub max_chain_steps: usize,
    /// Repair attempts after a defective interpretation.
    #[serde(default = "default_repairs")]
    pub interpret_repairs: u32,
    /// Repair attempts after an unparseable or invalid chain.
    #[serde(default = "default_repairs")]
    pub augment_repairs: u32,
    /// Summarize feedback deterministically instead of via the provider.
    #[serde(default)]
    pub offline_summarizer: bool,
    /// Use a logical clock in traces so reruns are byte-identical.
    #[serde(default)]
    pub deterministic_timestamps: bool,
    /// Directory of `<template-id>.txt` overrides.
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    /// Model used by stages without an override.
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub stages: StageOverrides,
}

impl EngineConfig {
    fn default_review_mode() -> ReviewMode {
        ReviewMode::Atomic
    }

    fn default_augment_mode() -> AugmentMode {
        AugmentMode::Structured
    }

    fn default_review_prompt_style() -> ReviewPromptStyle {
        ReviewPromptStyle::Structured
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_iterations == 0 {
            return Err(ConfigError::Invalid(
                "max_iterations must be at least 1".to_string(),
            ));
        }
        if self.max_chain_steps == 0 {
            return Err(ConfigError::Invalid(
                "max_chain_steps must be at least 1".to_string(),
            ));
        }
        Ok(())
    }

    /// Resolves the request parameters for a stage: overrides where given,
    /// otherwise temperature 0.3 for generation stages and 0.0 for review
    /// and summarization, with a 16384-token output budget.
    pub fn stage_params(&self, stage: Stage) -> StageParams {
        let (over, default_temp) = match stage {
            Stage::Interpret => (&self.stages.interpret, 0.3),
            Stage::Augment => (&self.stages.augment, 0.3),
            Stage::Review => (&self.stages.review, 0.0),
            Stage::Summarize => (&self.stages.summarize, 0.0),
        };
        StageParams {
            model_id: over.model.clone().unwrap_or_else(|| self.model.clone()),
            temperature: over.temperature.unwrap_or(default_temp),
            max_output_tokens: over.max_output_tokens.unwrap_or(16384),
        }
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty engine config must deserialize")
    }
}

/// Which backend serves completions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Live,
    Replay,
    Mock,
}

fn default_retry_base_ms() -> u64 {
    1000
}

fn default_retry_factor() -> f64 {
    2.0
}

fn default_retry_max_attempts() -> u32 {
    5
}

fn default_request_timeout_secs() -> u64 {
    300
}

/// Provider selection and transport policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default = "ProviderConfig::default_mode")]
    pub mode: ProviderMode,
    /// Endpoint base URL for live mode.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Cassette to replay in replay mode, or to record in live mode when
    /// `record` is set.
    #[serde(default)]
    pub cassette: Option<PathBuf>,
    /// Record live exchanges into `cassette`.
    #[serde(default)]
    pub record: bool,
    /// Script file for mock mode.
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    #[serde(default = "default_retry_factor")]
    pub retry_factor: f64,
    #[serde(default = "default_retry_max_attempts")]
    pub retry_max_attempts: u32,
    #[serde(default = "default_true")]
    pub retry_jitter: bool,
    #[serde(default = "default_request_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default)]
    pub dialect: DialectOverrides,
}

impl ProviderConfig {
    fn default_mode() -> ProviderMode {
        ProviderMode::Mock
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            base: Duration::from_millis(self.retry_base_ms),
            factor: self.retry_factor,
            max_attempts: self.retry_max_attempts.max(1),
            jitter: self.retry_jitter,
        }
    }
}

impl Default for ProviderConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty provider config must deserialize")
    }
}

/// Optional dialect remapping for non-native endpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialectOverrides {
    pub path: Option<String>,
    pub temperature_field: Option<String>,
    pub max_tokens_field: Option<String>,
    pub text_path: Option<String>,
    pub finish_path: Option<String>,
    pub prompt_tokens_path: Option<String>,
    pub completion_tokens_path: Option<String>,
    pub supports_images: Option<bool>,
}

impl DialectOverrides {
    pub fn apply(&self) -> crate::provider::DialectConfig {
        let mut dialect = crate::provider::DialectConfig::default();
        if let Some(v) = &self.path {
            dialect.path = v.clone();
        }
        if let Some(v) = &self.temperature_field {
            dialect.temperature_field = v.clone();
        }
        if let Some(v) = &self.max_tokens_field {
            dialect.max_tokens_field = v.clone();
        }
        if let Some(v) = &self.text_path {
            dialect.text_path = v.clone();
        }
        if let Some(v) = &self.finish_path {
            dialect.finish_path = v.clone();
        }
        if let Some(v) = &self.prompt_tokens_path {
            dialect.prompt_tokens_path = v.clone();
        }
        if let Some(v) = &self.completion_tokens_path {
            dialect.completion_tokens_path = v.clone();
        }
        if let Some(v) = self.supports_images {
            dialect.supports_images = v;
        }
        dialect
    }
}

/// The on-disk config file: version marker plus the two halves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "ConfigFile::default_version")]
    pub version: String,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
}

impl ConfigFile {
    fn default_version() -> String {
        CONFIG_FORMAT.to_string()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if file.version != CONFIG_FORMAT {
            return Err(ConfigError::Invalid(format!(
                "unsupported config version `{}`, expected `{CONFIG_FORMAT}`",
                file.version
            )));
        }
        file.engine.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            version: Self::default_version(),
            engine: EngineConfig::default(),
            provider: ProviderConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Environment variable holding the live-provider credential.
pub const API_KEY_ENV: &str = "LOCA_API_KEY";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_documented_policy() {
        let config = EngineConfig::default();
        assert_eq!(config.review_mode, ReviewMode::Atomic);
        assert_eq!(config.augment_mode, AugmentMode::Structured);
        assert_eq!(config.max_iterations, 5);
        assert_eq!(config.max_chain_steps, 200);
        assert_eq!(config.interpret_repairs, 2);
        assert_eq!(config.augment_repairs, 2);
        assert!(config.interpretation);

        let interpret = config.stage_params(Stage::Interpret);
        assert_eq!(interpret.temperature, 0.3);
        assert_eq!(interpret.max_output_tokens, 16384);
        assert_eq!(config.stage_params(Stage::Augment).temperature, 0.3);
        assert_eq!(config.stage_params(Stage::Review).temperature, 0.0);

        let provider = ProviderConfig::default();
        let retry = provider.retry_policy();
        assert_eq!(retry.base, Duration::from_secs(1));
        assert_eq!(retry.factor, 2.0);
        assert_eq!(retry.max_attempts, 5);
        assert!(retry.jitter);
    }

    #[test]
    fn stage_overrides_take_precedence() {
        let mut config = EngineConfig::default();
        config.stages.review.model = Some("strict-model".to_string());
        config.stages.review.temperature = Some(0.7);
        let params = config.stage_params(Stage::Review);
        assert_eq!(params.model_id, "strict-model");
        assert_eq!(params.temperature, 0.7);
        // other stages unaffected
        assert_eq!(config.stage_params(Stage::Augment).model_id, "default");
    }

    #[test]
    fn config_file_round_trip() {
        let mut file = ConfigFile::default();
        file.engine.review_mode = ReviewMode::Holistic;
        file.engine.max_iterations = 3;
        file.provider.mode = ProviderMode::Replay;
        let text = file.to_toml();
        let parsed = ConfigFile::parse(&text).unwrap();
        assert_eq!(parsed, file);
    }

    #[test]
    fn zero_iterations_is_rejected() {
        let text = "version = \"loca-config/1\"\n[engine]\nmax_iterations = 0\n";
        assert!(ConfigFile::parse(text).is_err());
    }

    #[test]
    fn wrong_version_is_rejected() {
        assert!(ConfigFile::parse("version = \"loca-config/9\"\n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "version = \"loca-config/1\"\n[engine]\nreview_mod = \"atomic\"\n";
        assert!(ConfigFile::parse(text).is_err());
    }
}
