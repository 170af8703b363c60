//! Run configuration: a TOML document with `[agent]`, `[env]`, `[replay]`
//! and `[run]` tables. An optional top-level `preset = "<name>"` selects a
//! built-in base configuration that the remaining keys override.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::envs::{EnvConfig, RewardLaw};
use crate::error::{Error, Result};
use crate::replay::{Prioritization, ReplayBuffer, RewardScaling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    #[default]
    Csv,
    Jsonl,
}

impl LogFormat {
    pub fn extension(self) -> &'static str {
        match self {
            LogFormat::Csv => "csv",
            LogFormat::Jsonl => "jsonl",
        }
    }
}

impl std::str::FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(LogFormat::Csv),
            "jsonl" => Ok(LogFormat::Jsonl),
            other => Err(Error::usage(format!("unknown log format `{other}` (expected csv or jsonl)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub prioritized: bool,
    /// Priority exponent.
    pub alpha: f64,
    /// Importance-sampling exponent, annealed linearly over the run.
    pub beta_start: f64,
    pub beta_end: f64,
    pub priority_eps: f64,
    pub normalize_states: bool,
    pub reward_normalization: RewardScaling,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        let p = Prioritization::default();
        Self {
            capacity: 400_000,
            prioritized: false,
            alpha: p.alpha,
            beta_start: 0.4,
            beta_end: 1.0,
            priority_eps: p.eps,
            normalize_states: true,
            reward_normalization: RewardScaling::Standardize,
        }
    }
}

impl ReplayConfig {
    pub fn build(&self) -> Result<ReplayBuffer> {
        if self.prioritized {
            ReplayBuffer::prioritized(
                self.capacity,
                Prioritization {
                    alpha: self.alpha,
                    eps: self.priority_eps,
                },
            )
        } else {
            ReplayBuffer::uniform(self.capacity)
        }
    }

    /// Importance exponent after `t` of `total` steps.
    pub fn beta_at(&self, t: u64, total: u64) -> f64 {
        let frac = if total == 0 { 1.0 } else { (t as f64 / total as f64).min(1.0) };
        self.beta_start + (self.beta_end - self.beta_start) * frac
    }

    fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::config("replay.capacity: must be positive"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::config("replay.alpha: must be >= 0"));
        }
        if !(self.priority_eps > 0.0) {
            return Err(Error::config("replay.priority_eps: must be positive"));
        }
        for (key, v) in [("beta_start", self.beta_start), ("beta_end", self.beta_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("replay.{key}: must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    /// Label used for output directories and sweep tables.
    pub name: String,
    pub total_steps: u64,
    /// Environment steps between greedy evaluations; 0 disables them.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub log_format: LogFormat,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Eval return that counts as solving the task.
    pub threshold: f64,
    /// Record elapsed wall-clock time in metrics. Off by default so that
    /// repeated runs produce identical logs.
    pub log_wall_clock: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            name: "run".into(),
            total_steps: 400_000,
            eval_every: 5000,
            eval_episodes: 5,
            seeds: vec![0],
            out_dir: PathBuf::from("runs"),
            log_format: LogFormat::Csv,
            checkpoint_every: 0,
            threshold: -10.0,
            log_wall_clock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub agent: AgentConfig,
    pub env: EnvConfig,
    pub replay: ReplayConfig,
    pub run: RunSettings,
}

/// Cube returns lie in [-40, 0], so this keeps every TD error in the quadratic
/// branch of the Huber loss. With a single quantile and a linear branch, the
/// rare terminal transitions at A are treated as outliers and never learned.
const CUBE_KAPPA: f64 = 100.0;

pub const PRESETS: &[&str] = &["cube-ddpg", "cube-uaddpg", "oracle-bernoulli", "oracle-gaussian"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let cube_replay = ReplayConfig {
            prioritized: true,
            reward_normalization: RewardScaling::None,
            ..ReplayConfig::default()
        };
        let cfg = match name {
            "cube-uaddpg" => RunConfig {
                agent: AgentConfig {
                    kappa: CUBE_KAPPA,
                    ..AgentConfig::default()
                },
                env: EnvConfig::Cube,
                replay: cube_replay,
                run: RunSettings {
                    name: name.into(),
                    ..RunSettings::default()
                },
            },
            "cube-ddpg" => RunConfig {
                agent: AgentConfig {
                    kappa: CUBE_KAPPA,
                    ..AgentConfig::ddpg()
                },
                env: EnvConfig::Cube,
                replay: cube_replay,
                run: RunSettings {
                    name: name.into(),
                    ..RunSettings::default()
                },
            },
            "oracle-bernoulli" | "oracle-gaussian" => {
                let reward = if name == "oracle-bernoulli" {
                    RewardLaw::Bernoulli {
                        p: 0.5,
                        low: 0.0,
                        high: 1.0,
                    }
                } else {
                    RewardLaw::Gaussian { mean: 0.0, std: 1.0 }
                };
                RunConfig {
                    agent: AgentConfig {
                        quantiles: 8,
                        gamma: 0.0,
                        kappa: 0.01,
                        random_steps: 1000,
                        init_std: 0.3,
                        critic_lr: 1e-4,
                        batch_size: 64,
                        ..AgentConfig::ddpg()
                    },
                    env: EnvConfig::QuantileOracle { reward },
                    replay: ReplayConfig {
                        capacity: 100_000,
                        ..ReplayConfig::default()
                    },
                    run: RunSettings {
                        name: name.into(),
                        total_steps: 21_000,
                        eval_every: 0,
                        threshold: f64::NEG_INFINITY,
                        ..RunSettings::default()
                    },
                }
            }
            other => {
                return Err(Error::config(format!(
                    "preset: unknown preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.env.validate()?;
        self.replay.validate()?;
        let run = &self.run;
        if run.seeds.is_empty() {
            return Err(Error::config("run.seeds: at least one seed is required"));
        }
        if run.total_steps < self.agent.random_steps {
            return Err(Error::config(format!(
                "run.total_steps: {} is shorter than agent.random_steps = {}",
                run.total_steps, self.agent.random_steps
            )));
        }
        if run.eval_every > 0 && run.eval_episodes == 0 {
            return Err(Error::config("run.eval_episodes: must be positive when evaluation is enabled"));
        }
        if run.name.is_empty() || run.name.contains(['/', '\\']) {
            return Err(Error::config("run.name: must be a non-empty plain file name"));
        }
        Ok(())
    }

    /// Parses a TOML document, applying `preset` first if present.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        let base = match doc.remove("preset") {
            None => RunConfig::default(),
            Some(toml::Value::String(name)) => RunConfig::preset(&name)?,
            Some(_) => return Err(Error::config("preset: expected a string")),
        };
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::config(e.to_string()))?;
        merge(&mut merged, doc);
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(merged)).map_err(|e| {
            let path = e.path().to_string();
            Error::config(format!("{path}: {}", e.into_inner().message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The fully resolved configuration as TOML; loading it yields `self`.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot encode config: {e}")))
    }
}

/// Recursively overlays `over` onto `base`. Tables merge key by key; any
/// other value replaces. The `env` table is replaced wholesale when its `id`
/// changes, since variants carry different keys.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                if k == "env" && o.get("id").is_some() && o.get("id") != b.get("id") {
                    *b = o;
                } else {
                    merge(b, o);
                }
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
