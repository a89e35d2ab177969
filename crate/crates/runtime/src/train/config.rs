use std::path::{Path, PathBuf};

use forge_core::grpo::{ClipConfig, CurriculumConfig, DEFAULT_STD_EPS};
use serde::{Deserialize, Serialize};

use crate::manager::ManagerConfig;
use crate::rollout::RolloutConfig;
use crate::sim::FaultConfig;

/// Where environments come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    /// In-process simulated instances (ignored with `manager_url`).
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub fault: FaultConfig,
    #[serde(default)]
    pub manager: ManagerConfig,
    /// Use a running manager service instead of the in-process farm.
    #[serde(default)]
    pub manager_url: Option<String>,
}

fn default_instances() -> usize {
    8
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            instances: default_instances(),
            latency_ms: 0,
            fault: FaultConfig::default(),
            manager: ManagerConfig::default(),
            manager_url: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: usize,
    /// Task suite file, relative to the config file.
    pub suite: PathBuf,
    /// Subset of the suite to train on; empty means all tasks.
    #[serde(default)]
    pub tasks: Vec<String>,
    /// Overrides every task's interrupt rate when set.
    #[serde(default)]
    pub interrupt_rate: Option<f64>,
    pub groups_per_iteration: usize,
    pub learning_rate: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_replay_replace")]
    pub replay_replace: usize,
    #[serde(default = "default_std_eps")]
    pub advantage_eps: f64,
    /// Iterations between checkpoints; 0 disables them.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Iterations between evaluations; 0 evaluates only at start and end.
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Sampling temperature used for evaluation.
    #[serde(default = "default_temperature")]
    pub eval_temperature: f64,
    #[serde(default)]
    pub rollout: RolloutConfig,
    #[serde(default)]
    pub clip: ClipConfig,
    #[serde(default)]
    pub curriculum: CurriculumConfig,
    #[serde(default)]
    pub pool: PoolConfig,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_feature_dim() -> usize {
    forge_core::policy::toy::DEFAULT_FEATURE_DIM
}
fn default_replay_replace() -> usize {
    forge_core::grpo::replay::DEFAULT_REPLACE_COUNT
}
fn default_std_eps() -> f64 {
    DEFAULT_STD_EPS
}
fn default_eval_episodes() -> usize {
    16
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl TrainConfig {
    /// Loads a config and resolves the suite path against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: TrainConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        if cfg.suite.is_relative() {
            cfg.suite = path.parent().unwrap_or(Path::new(".")).join(&cfg.suite);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.iterations == 0 || self.groups_per_iteration == 0 {
            return bad("iterations and groups_per_iteration must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.temperature > 0.0 && self.eval_temperature >= 0.0) {
            return bad("training temperature must be positive and eval temperature non-negative");
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be at least 2");
        }
        if self.eval_episodes < 2 {
            return bad("eval_episodes must be at least 2");
        }
        if self.interrupt_rate.is_some_and(|r| !(0.0..=1.0).contains(&r)) {
            return bad("interrupt_rate must lie in [0, 1]");
        }
        if self.pool.manager_url.is_none() && self.pool.instances == 0 {
            return bad("pool.instances must be positive");
        }
        self.rollout.validate().map_err(ConfigError::Invalid)?;
        self.clip.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.curriculum.validate().map_err(ConfigError::Invalid)?;
        self.pool.manager.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }
}
