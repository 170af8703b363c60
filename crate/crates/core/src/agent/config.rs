use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::RiskSpec;

/// Which actor drives behaviour during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ActorSelection {
    /// The actor whose action scores best under the trained ensemble.
    #[default]
    Greedy,
    /// A uniformly random actor at every step.
    RandomPerStep,
    /// A uniformly random actor drawn at the start of each episode.
    RandomPerEpisode,
}

/// Hyperparameters of the agent and its update rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Number of quantile outputs per critic.
    pub quantiles: usize,
    /// Ensemble size of critics.
    pub critics: usize,
    /// Ensemble size of actors.
    pub actors: usize,
    /// Hidden layer widths shared by actors and critics.
    pub hidden: Vec<usize>,
    pub gamma: f64,
    /// Target retention: `target <- polyak * target + (1 - polyak) * online`.
    pub polyak: f64,
    /// Standard deviation of the Gaussian parameter initialization.
    pub init_std: f64,
    /// Exploration time scale, in environment steps. Zero disables
    /// uncertainty-seeking actions apart from `min_exploration`.
    pub exploration_steps: f64,
    pub min_exploration: f64,
    /// Standard deviation of the Gaussian noise added to greedy actions,
    /// in environment action units.
    pub action_noise_std: f64,
    /// Uniform random actions taken before learning starts.
    pub random_steps: u64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Quantile Huber threshold.
    pub kappa: f64,
    pub batch_size: usize,
    /// Inference warns when epistemic uncertainty exceeds this.
    pub u_max: f64,
    /// Every `S`-th episode runs the greedy policy without noise or
    /// exploration. Written as `0` in config files when disabled.
    #[serde(with = "zero_is_none")]
    pub suspension_period: Option<u64>,
    pub risk: RiskSpec,
    /// Candidates evaluated along the uncertainty-ascent ray, including the
    /// greedy action itself.
    pub line_search_points: usize,
    /// Farthest ray candidate, in units of the action half-range.
    pub ray_extent: f64,
    pub actor_selection: ActorSelection,
    /// Environment steps between update phases.
    pub update_every: u64,
    /// Gradient passes per update phase.
    pub grad_steps: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            quantiles: 1,
            critics: 3,
            actors: 4,
            hidden: vec![30, 30],
            gamma: 0.99,
            polyak: 0.8,
            init_std: 1.0,
            exploration_steps: 1e5,
            min_exploration: 0.1,
            action_noise_std: 0.005,
            random_steps: 5000,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            kappa: 1.0,
            batch_size: 24,
            u_max: f64::INFINITY,
            suspension_period: Some(8),
            risk: RiskSpec::default(),
            line_search_points: 10,
            ray_extent: 1.0,
            actor_selection: ActorSelection::Greedy,
            update_every: 1,
            grad_steps: 1,
        }
    }
}

impl AgentConfig {
    /// Plain DDPG: one actor, one critic, one quantile, no uncertainty-driven
    /// exploration and no suspension episodes.
    pub fn ddpg() -> Self {
        Self {
            quantiles: 1,
            critics: 1,
            actors: 1,
            exploration_steps: 0.0,
            min_exploration: 0.0,
            suspension_period: None,
            ..Self::default()
        }
    }

    /// Probability of an uncertainty-seeking action at environment step `t`:
    /// `max(1 - t / T_exp, p_min)`.
    pub fn exploration_rate(&self, t: u64) -> f64 {
        if self.exploration_steps <= 0.0 {
            return self.min_exploration;
        }
        (1.0 - t as f64 / self.exploration_steps).max(self.min_exploration)
    }

    /// True when exploratory actions can ever be taken.
    pub fn explores(&self) -> bool {
        self.exploration_steps > 0.0 || self.min_exploration > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::config(format!("agent.{key}: {why}")));
        if self.quantiles == 0 {
            return bad("quantiles", "must be at least 1");
        }
        if self.critics == 0 {
            return bad("critics", "must be at least 1");
        }
        if self.actors == 0 {
            return bad("actors", "must be at least 1");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden", "layer widths must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad("polyak", "must lie in [0, 1]");
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad("init_std", "must be positive");
        }
        if !(self.exploration_steps >= 0.0) {
            return bad("exploration_steps", "must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.min_exploration) {
            return bad("min_exploration", "must lie in [0, 1]");
        }
        if !(self.action_noise_std >= 0.0) {
            return bad("action_noise_std", "must be non-negative");
        }
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            return bad("actor_lr/critic_lr", "learning rates must be positive");
        }
        if !(self.kappa > 0.0) {
            return bad("kappa", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.u_max.is_nan() {
            return bad("u_max", "must be a number");
        }
        if self.line_search_points == 0 {
            return bad("line_search_points", "must be at least 1");
        }
        if !(self.ray_extent >= 0.0) {
            return bad("ray_extent", "must be non-negative");
        }
        if self.suspension_period == Some(0) {
            return bad("suspension_period", "use None (0 in config files) to disable");
        }
        if self.update_every == 0 {
            return bad("update_every", "must be positive");
        }
        if self.explores() && self.critics < 2 {
            return bad("critics", "uncertainty-driven exploration needs at least 2 critics");
        }
        self.risk.resolve(self.quantiles)?;
        Ok(())
    }
}


mod zero_is_none {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<u64>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.unwrap_or(0))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
        Ok(Some(u64::deserialize(d)?).filter(|&p| p > 0))
    }
}
