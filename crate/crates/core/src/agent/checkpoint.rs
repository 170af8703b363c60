//! Binary agent checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    b"UADDPGCK"
//! u32      format version (1)
//! u64      length of the agent config, then that many bytes of TOML
//! u32 u32  state_dim, action_dim
//! f64*d    action_low, then action_high
//! u64      max_episode_steps
//! u64      environment step counter
//! u8       1 if a normalizer follows, else 0
//! ...      normalizer: u32 dim, f64 means, f64 stds, f64 reward mean/std, u8 flags x2
//! ...      K actors, M critics, K target actors, M target critics, each an
//!          `Mlp` record (see `Mlp::write_to`)
//! ```

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::{ByteReader, Mlp};
use crate::replay::Normalizer;
use crate::rng::Rng;

use super::{Agent, AgentConfig};

const MAGIC: &[u8; 8] = b"UADDPGCK";
const VERSION: u32 = 1;

/// Everything needed to rebuild an agent for inference or inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: AgentConfig,
    pub spec: EnvSpec,
    pub step: u64,
    pub normalizer: Option<Normalizer>,
    pub actors: Vec<Mlp>,
    pub critics: Vec<Mlp>,
    pub target_actors: Vec<Mlp>,
    pub target_critics: Vec<Mlp>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cfg = toml::to_string(&self.config).map_err(|e| Error::Checkpoint(format!("cannot encode config: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&(self.spec.state_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.spec.action_dim as u32).to_le_bytes());
        for v in self.spec.action_low.iter().chain(&self.spec.action_high) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.spec.max_episode_steps as u64).to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        match &self.normalizer {
            Some(n) => {
                out.push(1);
                n.write_to(&mut out);
            }
            None => out.push(0),
        }
        for net in self
            .actors
            .iter()
            .chain(&self.critics)
            .chain(&self.target_actors)
            .chain(&self.target_critics)
        {
            net.write_to(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not an agent checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
        let config: AgentConfig =
            toml::from_str(text).map_err(|e| Error::Checkpoint(format!("bad embedded config: {e}")))?;
        let state_dim = r.u32()? as usize;
        let action_dim = r.u32()? as usize;
        let action_low = (0..action_dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let action_high = (0..action_dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let spec = EnvSpec {
            state_dim,
            action_dim,
            action_low,
            action_high,
            max_episode_steps: r.u64()? as usize,
        };
        let step = r.u64()?;
        let normalizer = match r.take(1)?[0] {
            0 => None,
            1 => Some(Normalizer::read_from(&mut r)?),
            x => return Err(Error::Checkpoint(format!("bad normalizer flag {x}"))),
        };
        let mut nets = |count: usize| (0..count).map(|_| Mlp::read_from(&mut r)).collect::<Result<Vec<_>>>();
        let actors = nets(config.actors)?;
        let critics = nets(config.critics)?;
        let target_actors = nets(config.actors)?;
        let target_critics = nets(config.critics)?;
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            config,
            spec,
            step,
            normalizer,
            actors,
            critics,
            target_actors,
            target_critics,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl Agent {
    pub fn checkpoint(&self, step: u64) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            spec: self.spec.clone(),
            step,
            normalizer: self.normalizer.clone(),
            actors: self.actors.clone(),
            critics: self.critics.clone(),
            target_actors: self.target_actors.clone(),
            target_critics: self.target_critics.clone(),
        }
    }

    /// Rebuilds an agent; optimizer moments start fresh.
    pub fn from_checkpoint(ckpt: Checkpoint, action_rng: Rng) -> Result<Self> {
        Self::from_parts(
            ckpt.config,
            ckpt.spec,
            ckpt.actors,
            ckpt.critics,
            ckpt.target_actors,
            ckpt.target_critics,
            ckpt.normalizer,
            action_rng,
        )
        .map_err(|e| Error::Checkpoint(format!("inconsistent checkpoint: {e}")))
    }
}
