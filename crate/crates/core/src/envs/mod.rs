//! Environments: a common step interface plus the cube exploration task and a
//! one-step environment with a known reward distribution.

mod cube;
mod oracle;

pub use cube::{CubeEnv, CubeGeometry};
pub use oracle::{QuantileOracleEnv, RewardLaw};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Shapes and bounds an agent needs to act in an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(Error::config("environment dimensions must be positive"));
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(Error::config("action bounds do not match action dimension"));
        }
        if self.action_low.iter().zip(&self.action_high).any(|(l, h)| !(l < h)) {
            return Err(Error::config("action box needs low < high in every dimension"));
        }
        Ok(())
    }

    /// Clips `a` into the action box; returns whether anything changed.
    pub fn clip(&self, a: &mut [f64]) -> bool {
        let mut changed = false;
        for ((x, &lo), &hi) in a.iter_mut().zip(&self.action_low).zip(&self.action_high) {
            let c = x.clamp(lo, hi);
            changed |= c != *x;
            *x = c;
        }
        changed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Reached a terminal state.
    pub done: bool,
    /// Cut off by the episode time limit.
    pub truncated: bool,
    /// The requested action was outside the box and has been clipped.
    pub clipped: bool,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    /// Starts a new episode and returns the initial state.
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepResult;
}

/// Environment selection as written in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvConfig {
    Cube,
    QuantileOracle { reward: RewardLaw },
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Cube
    }
}

impl EnvConfig {
    /// Parses a bare environment id as accepted on the command line.
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "cube" => Ok(EnvConfig::Cube),
            "quantile-oracle" | "oracle-bernoulli" => Ok(EnvConfig::QuantileOracle {
                reward: RewardLaw::Bernoulli { p: 0.5, low: 0.0, high: 1.0 },
            }),
            "oracle-gaussian" => Ok(EnvConfig::QuantileOracle {
                reward: RewardLaw::Gaussian { mean: 0.0, std: 1.0 },
            }),
            other => Err(Error::config(format!("unknown environment id {other:?}"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            EnvConfig::Cube => "cube",
            EnvConfig::QuantileOracle { .. } => "quantile-oracle",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Cube => Ok(()),
            EnvConfig::QuantileOracle { reward } => reward.validate(),
        }
    }

    /// Builds an environment whose internal randomness derives from `seed`
    /// and `stream`.
    pub fn build(&self, seed: u64, stream: Stream) -> Result<Box<dyn Env>> {
        self.validate()?;
        let rng = rng::stream(seed, stream);
        Ok(match self {
            EnvConfig::Cube => Box::new(CubeEnv::new(rng)),
            EnvConfig::QuantileOracle { reward } => Box::new(QuantileOracleEnv::new(*reward, rng)?),
        })
    }
}
