use std::path::Path;

use anyhow::{bail, Context, Result};
use groundalign::alignment::{IterativeConfig, MuveConfig};
use groundalign::corpus::{DEFAULT_MAX_VOCAB, DEFAULT_SENTENCE_LEN};
use groundalign::embeddings::SkipGramConfig;
use groundalign::grounding::GroundTrainConfig;
use groundalign::synthworld::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_VERSION: u32 = 1;

/// Raised for unreadable, malformed or incompatible config files.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSettings {
    pub max_size: usize,
    pub sentence_len: usize,
}

impl Default for VocabSettings {
    fn default() -> Self {
        Self {
            max_size: DEFAULT_MAX_VOCAB,
            sentence_len: DEFAULT_SENTENCE_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub top_k: usize,
    pub csls_k: usize,
    pub chance_trials: usize,
    pub neighbours: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            top_k: 10,
            csls_k: 10,
            chance_trials: 1_000,
            neighbours: groundalign::baselines::DEFAULT_NEIGHBOURS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub version: u32,
    pub vocab: VocabSettings,
    pub skipgram: SkipGramConfig,
    pub ground: GroundTrainConfig,
    pub muve: MuveConfig,
    pub iterative: IterativeConfig,
    pub eval: EvalSettings,
    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            vocab: VocabSettings::default(),
            skipgram: SkipGramConfig::default(),
            ground: GroundTrainConfig::default(),
            muve: MuveConfig::default(),
            iterative: IterativeConfig::default(),
            eval: EvalSettings::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        if config.version != CONFIG_VERSION {
            bail!(ConfigError(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                config.version
            )));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Defaults when no path is given.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn sha256(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
