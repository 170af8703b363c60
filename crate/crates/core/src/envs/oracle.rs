use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use super::{Env, EnvSpec, StepResult};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Reward distribution of the oracle environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
pub enum RewardLaw {
    /// `high` with probability `p`, else `low`.
    Bernoulli { p: f64, low: f64, high: f64 },
    Gaussian { mean: f64, std: f64 },
    Point { value: f64 },
}

impl RewardLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RewardLaw::Bernoulli { p, low, high } if (0.0..=1.0).contains(&p) && low < high => Ok(()),
            RewardLaw::Gaussian { std, .. } if std > 0.0 => Ok(()),
            RewardLaw::Point { value } if value.is_finite() => Ok(()),
            other => Err(Error::config(format!("env.reward: invalid law {other:?}"))),
        }
    }

    /// The exact quantile function `inf { x : F(x) >= tau }`.
    pub fn quantile(&self, tau: f64) -> f64 {
        match *self {
            RewardLaw::Bernoulli { p, low, high } => {
                if tau <= 1.0 - p {
                    low
                } else {
                    high
                }
            }
            RewardLaw::Gaussian { mean, std } => {
                StatNormal::new(mean, std).expect("validated").inverse_cdf(tau)
            }
            RewardLaw::Point { value } => value,
        }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            RewardLaw::Bernoulli { p, low, high } => {
                if rng.random::<f64>() < p {
                    high
                } else {
                    low
                }
            }
            RewardLaw::Gaussian { mean, std } => Normal::new(mean, std).expect("validated").sample(rng),
            RewardLaw::Point { value } => value,
        }
    }
}

/// Single dummy state, one-dimensional ignored action, one-step episodes
/// paying a reward drawn from a fixed law.
pub struct QuantileOracleEnv {
    law: RewardLaw,
    spec: EnvSpec,
    rng: Rng,
}

impl QuantileOracleEnv {
    pub fn new(law: RewardLaw, rng: Rng) -> Result<Self> {
        law.validate()?;
        Ok(Self {
            law,
            spec: EnvSpec {
                state_dim: 1,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                max_episode_steps: 1,
            },
            rng,
        })
    }

    pub fn law(&self) -> &RewardLaw {
        &self.law
    }

    pub fn oracle_quantiles(&self, taus: &[f64]) -> Vec<f64> {
        taus.iter().map(|&t| self.law.quantile(t)).collect()
    }
}

impl Env for QuantileOracleEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        vec![0.0]
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let mut a = action.to_vec();
        let clipped = self.spec.clip(&mut a);
        StepResult {
            next_state: vec![0.0],
            reward: self.law.sample(&mut self.rng),
            done: true,
            truncated: false,
            clipped,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn oracle_quantile_examples() {
        let b = RewardLaw::Bernoulli { p: 0.5, low: 0.0, high: 1.0 };
        assert_eq!([0.25, 0.75].map(|t| b.quantile(t)), [0.0, 1.0]);
        let pt = RewardLaw::Point { value: 2.5 };
        assert!([0.01, 0.5, 0.99].iter().all(|&t| pt.quantile(t) == 2.5));
        let g = RewardLaw::Gaussian { mean: 0.0, std: 1.0 };
        assert!(g.quantile(0.5).abs() < 1e-12);
        assert!((g.quantile(0.975) - 1.959963984540054).abs() < 1e-9);
    }

    #[test]
    fn one_step_episodes() {
        let mut e = QuantileOracleEnv::new(RewardLaw::Point { value: 1.0 }, stream(0, Stream::Env)).unwrap();
        assert_eq!(e.reset(), vec![0.0]);
        let r = e.step(&[0.3]);
        assert!(r.done && r.reward == 1.0);
    }

    #[test]
    fn empirical_quantiles_match_oracle() {
        let law = RewardLaw::Gaussian { mean: 0.5, std: 2.0 };
        let mut e = QuantileOracleEnv::new(law, stream(11, Stream::Env)).unwrap();
        let n = 1_000_000;
        let mut samples: Vec<f64> = (0..n).map(|_| e.step(&[0.0]).reward).collect();
        samples.sort_by(f64::total_cmp);
        let taus = [0.05, 0.25, 0.5, 0.75, 0.95];
        for (t, q) in taus.iter().zip(e.oracle_quantiles(&taus)) {
            let emp = samples[(t * n as f64) as usize];
            assert!((emp - q).abs() < 0.01, "tau {t}: {emp} vs {q}");
        }
    }

    #[test]
    fn invalid_laws_rejected() {
        assert!(RewardLaw::Bernoulli { p: 1.5, low: 0.0, high: 1.0 }.validate().is_err());
        assert!(RewardLaw::Gaussian { mean: 0.0, std: 0.0 }.validate().is_err());
    }
}
