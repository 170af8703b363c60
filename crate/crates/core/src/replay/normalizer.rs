use serde::{Deserialize, Serialize};

use super::Transition;
use crate::error::{Error, Result};
use crate::nn::ByteReader;

/// Lower bound on every standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// How rewards are rescaled before they enter the critic loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RewardScaling {
    /// `(r - mean) / std`
    #[default]
    Standardize,
    /// `r / std`
    Scale,
    None,
}

/// State and reward statistics, fixed once computed.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    state_mean: Vec<f64>,
    state_std: Vec<f64>,
    reward_mean: f64,
    reward_std: f64,
    normalize_states: bool,
    reward_scaling: RewardScaling,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(STD_FLOOR))
}

impl Normalizer {
    /// Computes per-dimension state statistics (over `s` of every
    /// transition) and reward statistics.
    pub fn fit<'a, I>(transitions: I, normalize_states: bool, reward_scaling: RewardScaling) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Transition>,
        I::IntoIter: Clone,
    {
        let it = transitions.into_iter();
        let first = it.clone().next().ok_or_else(|| Error::usage("cannot fit a normalizer on an empty buffer"))?;
        let dim = first.state.len();
        let mut state_mean = Vec::with_capacity(dim);
        let mut state_std = Vec::with_capacity(dim);
        for d in 0..dim {
            let (m, s) = mean_std(it.clone().map(move |t| t.state[d]));
            state_mean.push(m);
            state_std.push(s);
        }
        let (reward_mean, reward_std) = mean_std(it.map(|t| t.reward));
        Ok(Self {
            state_mean,
            state_std,
            reward_mean,
            reward_std,
            normalize_states,
            reward_scaling,
        })
    }

    /// Pass-through normalizer for a `dim`-dimensional state.
    pub fn identity(dim: usize) -> Self {
        Self {
            state_mean: vec![0.0; dim],
            state_std: vec![1.0; dim],
            reward_mean: 0.0,
            reward_std: 1.0,
            normalize_states: false,
            reward_scaling: RewardScaling::None,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_mean.len()
    }

    pub fn state_mean(&self) -> &[f64] {
        &self.state_mean
    }

    pub fn state_std(&self) -> &[f64] {
        &self.state_std
    }

    pub fn reward_mean(&self) -> f64 {
        self.reward_mean
    }

    pub fn reward_std(&self) -> f64 {
        self.reward_std
    }

    pub fn normalize_state_into(&self, s: &[f64], out: &mut [f64]) {
        if self.normalize_states {
            for (((o, &x), &m), &sd) in out.iter_mut().zip(s).zip(&self.state_mean).zip(&self.state_std) {
                *o = (x - m) / sd;
            }
        } else {
            out.copy_from_slice(s);
        }
    }

    pub fn normalize_state(&self, s: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; s.len()];
        self.normalize_state_into(s, &mut out);
        out
    }

    pub fn normalize_reward(&self, r: f64) -> f64 {
        match self.reward_scaling {
            RewardScaling::Standardize => (r - self.reward_mean) / self.reward_std,
            RewardScaling::Scale => r / self.reward_std,
            RewardScaling::None => r,
        }
    }

    /// Maps a value in normalized-reward units back to raw reward units.
    pub fn denormalize_reward(&self, r: f64) -> f64 {
        match self.reward_scaling {
            RewardScaling::Standardize => r * self.reward_std + self.reward_mean,
            RewardScaling::Scale => r * self.reward_std,
            RewardScaling::None => r,
        }
    }

    pub(crate) fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.state_mean.len() as u32).to_le_bytes());
        for v in self.state_mean.iter().chain(&self.state_std) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.reward_mean.to_le_bytes());
        out.extend_from_slice(&self.reward_std.to_le_bytes());
        out.push(self.normalize_states as u8);
        out.push(match self.reward_scaling {
            RewardScaling::Standardize => 0,
            RewardScaling::Scale => 1,
            RewardScaling::None => 2,
        });
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        let dim = r.u32()? as usize;
        let state_mean = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let state_std = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let reward_mean = r.f64()?;
        let reward_std = r.f64()?;
        let flags = r.take(2)?;
        let reward_scaling = match flags[1] {
            0 => RewardScaling::Standardize,
            1 => RewardScaling::Scale,
            2 => RewardScaling::None,
            x => return Err(Error::Checkpoint(format!("unknown reward scaling tag {x}"))),
        };
        Ok(Self {
            state_mean,
            state_std,
            reward_mean,
            reward_std,
            normalize_states: flags[0] != 0,
            reward_scaling,
        })
    }
}
