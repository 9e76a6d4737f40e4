//! Search configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use rcnas_core::policy::PolicyConfig;
use rcnas_core::reinforce::{DEFAULT_CLIP_NORM, DEFAULT_DECAY};
use rcnas_core::{Adam, Architecture, RewardConfig, SearchMode, SearchSpace};
use serde::{Deserialize, Serialize};

use crate::format::{arch_from_value, parse_arch};
use crate::protocol::Budget;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Search space given by preset name or inline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceSource {
    Preset(String),
    Inline(SearchSpace),
}

/// Architecture given inline or as a path (relative to the config file).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchSource {
    Path(String),
    Inline(serde_json::Value),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EvaluatorConfig {
    Surrogate,
    External {
        /// Program and arguments of the worker.
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default = "default_handshake")]
        handshake_timeout_secs: f64,
        #[serde(default)]
        budget: Budget,
    },
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig::Surrogate
    }
}

fn default_timeout() -> f64 {
    3600.0
}
fn default_handshake() -> f64 {
    30.0
}
fn default_lr() -> f64 {
    Adam::DEFAULT_LR
}
fn default_decay() -> f64 {
    DEFAULT_DECAY
}
fn default_clip() -> f64 {
    DEFAULT_CLIP_NORM
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub mode: SearchMode,
    /// Defaults to `kws-layers` in layer mode and `image-module` in module mode.
    #[serde(default)]
    pub search_space: Option<SpaceSource>,
    #[serde(default)]
    pub reward: RewardConfig,
    /// Steps per rollout (T).
    pub episode_size: usize,
    /// Parallel rollouts per episode (N).
    pub batch_size: usize,
    pub episodes: usize,
    #[serde(default)]
    pub evaluator: EvaluatorConfig,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `batch_size`.
    #[serde(default)]
    pub top_k: Option<usize>,
    pub baseline_arch: ArchSource,
    #[serde(default)]
    pub reset_baseline_each_episode: bool,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_decay")]
    pub baseline_decay: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default = "default_true")]
    pub cache: bool,
}

/// A validated config with its space and baseline resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub config: SearchConfig,
    pub space: SearchSpace,
    pub baseline: Architecture,
}

impl Resolved {
    pub fn top_k(&self) -> usize {
        self.config.top_k.unwrap_or(self.config.batch_size)
    }
}

pub fn load(path: &Path) -> Result<Resolved, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config: SearchConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    resolve(config, path.parent().unwrap_or(Path::new(".")))
}

/// Validates `config`; relative architecture paths resolve against `dir`.
pub fn resolve(config: SearchConfig, dir: &Path) -> Result<Resolved, ConfigError> {
    let invalid = |m: String| Err(ConfigError::Invalid(m));
    let c = &config;
    if c.episode_size == 0 {
        return invalid("episode_size must be at least 1".into());
    }
    if c.batch_size == 0 {
        return invalid("batch_size must be at least 1".into());
    }
    if c.episodes == 0 {
        return invalid("episodes must be at least 1".into());
    }
    if let Some(k) = c.top_k {
        if k == 0 || (c.mode == SearchMode::LayerByLayer && k > c.batch_size) {
            return invalid(format!("top_k must be in 1..={}", c.batch_size));
        }
    }
    if !(c.learning_rate > 0.0 && c.learning_rate.is_finite()) {
        return invalid("learning_rate must be positive".into());
    }
    if !(0.0..1.0).contains(&c.baseline_decay) {
        return invalid("baseline_decay must be in [0, 1)".into());
    }
    if !(c.clip_norm > 0.0) {
        return invalid("clip_norm must be positive".into());
    }
    let p = &c.policy;
    if p.embed_dim == 0 || p.encoder_hidden == 0 || p.controller_hidden == 0 || !(p.init_range >= 0.0) {
        return invalid("policy sizes must be positive".into());
    }
    if let EvaluatorConfig::External {
        command,
        timeout_secs,
        handshake_timeout_secs,
        ..
    } = &c.evaluator
    {
        if command.is_empty() {
            return invalid("external evaluator needs a command".into());
        }
        if !(*timeout_secs > 0.0 && *handshake_timeout_secs > 0.0) {
            return invalid("timeouts must be positive".into());
        }
    }
    c.reward
        .check()
        .map_err(|e| ConfigError::Invalid(format!("reward: {e}")))?;

    let space = match &c.search_space {
        None => match c.mode {
            SearchMode::LayerByLayer => SearchSpace::kws_layers(),
            SearchMode::Module => SearchSpace::image_module(),
        },
        Some(SpaceSource::Preset(name)) => SearchSpace::preset(name)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown search space preset {name:?}")))?,
        Some(SpaceSource::Inline(s)) => s.clone(),
    };
    space
        .check()
        .map_err(|e| ConfigError::Invalid(format!("search_space: {e}")))?;
    if space.mode != c.mode {
        return invalid("search_space mode differs from mode".into());
    }

    let baseline = match &c.baseline_arch {
        ArchSource::Path(p) => {
            let path = dir.join(p);
            let text = fs::read_to_string(&path).map_err(|source| ConfigError::Io { path, source })?;
            parse_arch(&text)
        }
        ArchSource::Inline(v) => arch_from_value(v.clone()),
    }
    .map_err(|e| ConfigError::Invalid(format!("baseline_arch: {e}")))?;
    let arch_mode = match baseline {
        Architecture::Layers(_) => SearchMode::LayerByLayer,
        Architecture::Module(_) => SearchMode::Module,
    };
    if arch_mode != c.mode {
        return invalid("baseline_arch mode differs from mode".into());
    }
    if let Some(v) = baseline.validate().first() {
        return invalid(format!("baseline_arch: {v}"));
    }
    if baseline.unit_count() > space.max_units() {
        return invalid("baseline_arch is larger than the search space allows".into());
    }
    Ok(Resolved {
        config,
        space,
        baseline,
    })
}
