use serde::Serialize;

use crate::agent::{Agent, Checkpoint};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub episode: usize,
    pub t: usize,
    pub eu: f64,
    pub au: f64,
    pub warned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub lengths: Vec<usize>,
    pub steps: Vec<StepLog>,
    pub warned_steps: usize,
    pub total_steps: usize,
    pub mean_return: f64,
}

/// Greedy, noise-free rollouts of a checkpointed agent with an uncertainty
/// report at every step. `u_max` overrides the checkpoint's threshold.
pub fn run_inference(ckpt: &Checkpoint, env: &EnvConfig, episodes: usize, u_max: Option<f64>, seed: u64) -> Result<EvalReport> {
    let mut cfg = ckpt.clone();
    if let Some(u) = u_max {
        if u.is_nan() {
            return Err(Error::usage("u_max must not be NaN"));
        }
        cfg.config.u_max = u;
    }
    let mut env = env.build(seed, Stream::Eval)?;
    let spec = env.spec().clone();
    if spec.state_dim != cfg.spec.state_dim || spec.action_dim != cfg.spec.action_dim {
        return Err(Error::usage(format!(
            "checkpoint expects state/action dims {}/{}, environment has {}/{}",
            cfg.spec.state_dim, cfg.spec.action_dim, spec.state_dim, spec.action_dim
        )));
    }
    let agent = Agent::from_checkpoint(cfg, stream(seed, Stream::Action))?;
    let mut report = EvalReport {
        returns: Vec::with_capacity(episodes),
        lengths: Vec::with_capacity(episodes),
        steps: Vec::new(),
        warned_steps: 0,
        total_steps: 0,
        mean_return: f64::NAN,
    };
    for episode in 0..episodes {
        let mut s = env.reset();
        let (mut ret, mut t) = (0.0, 0);
        loop {
            let (a, u) = agent.act_inference(&s)?;
            report.warned_steps += u.warned as usize;
            report.steps.push(StepLog {
                episode,
                t,
                eu: u.eu,
                au: u.au,
                warned: u.warned,
            });
            let r = env.step(&a);
            ret += r.reward;
            t += 1;
            if r.done || r.truncated {
                break;
            }
            s = r.next_state;
        }
        report.returns.push(ret);
        report.lengths.push(t);
        report.total_steps += t;
    }
    if episodes > 0 {
        report.mean_return = report.returns.iter().sum::<f64>() / episodes as f64;
    }
    Ok(report)
}
