use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};

use super::config::RunConfig;
use super::metrics::{MetricRecord, MetricWriter, RecordKind};
use crate::agent::{ActionKind, Agent, Checkpoint, TrainReport};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::replay::{Normalizer, ReplayBuffer, Transition};
use crate::rng::{stream, Rng, Stream};

/// What happened during one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub action: Vec<f64>,
    pub kind: ActionKind,
    pub reward: f64,
    /// Reports of the gradient passes run after this step, in order.
    pub updates: Vec<TrainReport>,
    /// Records emitted after this step (episode end and/or evaluation).
    pub records: Vec<MetricRecord>,
}

#[derive(Default)]
struct Window {
    actor_loss: f64,
    critic_loss: f64,
    losses: u64,
    eu: f64,
    eu_count: u64,
    explore: u64,
    acted: u64,
}

impl Window {
    fn mean(sum: f64, n: u64) -> Option<f64> {
        (n > 0).then(|| sum / n as f64)
    }
}

/// One seed's training run, advanced a step at a time.
pub struct Trainer {
    cfg: RunConfig,
    seed: u64,
    agent: Agent,
    env: Box<dyn Env>,
    eval_env: Box<dyn Env>,
    buffer: ReplayBuffer,
    replay_rng: Rng,
    step: u64,
    episode: u64,
    gradient_steps: u64,
    state: Vec<f64>,
    ep_return: f64,
    ep_len: u64,
    window: Window,
    started: Instant,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut env = cfg.env.build(seed, Stream::Env)?;
        let eval_env = cfg.env.build(seed, Stream::Eval)?;
        let mut init = stream(seed, Stream::Init);
        let mut agent = Agent::new(cfg.agent.clone(), env.spec().clone(), &mut init, stream(seed, Stream::Action))?;
        let buffer = cfg.replay.build()?;
        let state = env.reset();
        agent.begin_episode(0);
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            agent,
            env,
            eval_env,
            buffer,
            replay_rng: stream(seed, Stream::Replay),
            step: 0,
            episode: 0,
            gradient_steps: 0,
            state,
            ep_return: 0.0,
            ep_len: 0,
            window: Window::default(),
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Environment steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn episodes(&self) -> u64 {
        self.episode
    }

    pub fn gradient_steps(&self) -> u64 {
        self.gradient_steps
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.run.total_steps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.agent.checkpoint(self.step)
    }

    fn wall_ms(&self) -> Option<u64> {
        self.cfg
            .run
            .log_wall_clock
            .then(|| self.started.elapsed().as_millis() as u64)
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let (action, kind) = self.agent.act_training(&self.state, self.step)?;
        if self.agent.normalizer().is_some() && self.agent.config().critics > 1 {
            self.window.eu += self.agent.epistemic_uncertainty(&self.state, &action)?;
            self.window.eu_count += 1;
        }
        if kind != ActionKind::Random {
            self.window.acted += 1;
            self.window.explore += (kind == ActionKind::Exploratory) as u64;
        }
        let res = self.env.step(&action);
        let mut stored = action.clone();
        self.env.spec().clip(&mut stored);
        self.buffer.push(Transition {
            state: std::mem::take(&mut self.state),
            action: stored,
            reward: res.reward,
            next_state: res.next_state.clone(),
            done: res.done,
        });
        self.step += 1;
        self.ep_return += res.reward;
        self.ep_len += 1;

        let (random_steps, update_every, grad_steps, batch_size) = {
            let c = self.agent.config();
            (c.random_steps, c.update_every, c.grad_steps, c.batch_size)
        };
        if self.step == random_steps.max(1) && self.agent.normalizer().is_none() {
            let norm = Normalizer::fit(
                self.buffer.iter(),
                self.cfg.replay.normalize_states,
                self.cfg.replay.reward_normalization,
            )?;
            debug!(
                "seed {}: normalizer frozen at step {} (reward mean {}, std {})",
                self.seed,
                self.step,
                norm.reward_mean(),
                norm.reward_std()
            );
            self.agent.set_normalizer(norm)?;
        }

        let mut updates = Vec::new();
        if self.step > random_steps && self.step % update_every == 0 {
            for _ in 0..grad_steps {
                let batch = self.buffer.sample(batch_size, &mut self.replay_rng)?;
                let report = self.agent.train_step(&batch)?;
                let keys = batch.keys;
                self.buffer.update_priorities(&keys, &report.td_errors)?;
                self.window.actor_loss += report.actor_loss();
                self.window.critic_loss += report.critic_loss();
                self.window.losses += 1;
                self.gradient_steps += 1;
                updates.push(report);
            }
            self.agent.update_targets();
        }

        let mut records = Vec::new();
        if res.done || res.truncated {
            let w = std::mem::take(&mut self.window);
            records.push(MetricRecord {
                seed: self.seed,
                step: self.step,
                kind: RecordKind::Train,
                ret: self.ep_return,
                ep_len: self.ep_len as f64,
                actor_loss: Window::mean(w.actor_loss, w.losses),
                critic_loss: Window::mean(w.critic_loss, w.losses),
                eu_mean: Window::mean(w.eu, w.eu_count),
                explore_frac: Window::mean(w.explore as f64, w.acted),
                wall_ms: self.wall_ms(),
            });
            self.episode += 1;
            self.ep_return = 0.0;
            self.ep_len = 0;
            self.state = self.env.reset();
            self.agent.begin_episode(self.episode);
        } else {
            self.state = res.next_state;
        }

        let beta = self.cfg.replay.beta_at(self.step, self.cfg.run.total_steps);
        self.buffer.set_importance_exponent(beta);

        let every = self.cfg.run.eval_every;
        let due = every > 0 && (self.step % every == 0 || self.step == self.cfg.run.total_steps);
        if due && self.agent.normalizer().is_some() {
            let (ret, len) = self.evaluate(self.cfg.run.eval_episodes)?;
            records.push(MetricRecord {
                seed: self.seed,
                step: self.step,
                kind: RecordKind::Eval,
                ret,
                ep_len: len,
                actor_loss: None,
                critic_loss: None,
                eu_mean: None,
                explore_frac: None,
                wall_ms: self.wall_ms(),
            });
        }

        Ok(StepOutcome {
            action,
            kind,
            reward: res.reward,
            updates,
            records,
        })
    }

    /// Greedy, noise-free episodes on the evaluation environment. Returns the
    /// mean return and mean episode length. Leaves training state untouched.
    pub fn evaluate(&mut self, episodes: usize) -> Result<(f64, f64)> {
        let (mut total, mut steps) = (0.0, 0usize);
        for _ in 0..episodes {
            let mut s = self.eval_env.reset();
            loop {
                let a = self.agent.greedy_action(&s)?;
                let r = self.eval_env.step(&a);
                total += r.reward;
                steps += 1;
                if r.done || r.truncated {
                    break;
                }
                s = r.next_state;
            }
        }
        let n = episodes.max(1) as f64;
        Ok((total / n, steps as f64 / n))
    }
}

/// Output locations for one seed of a run.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

pub fn seed_dir(out: &Path, cfg: &RunConfig, seed: u64) -> PathBuf {
    out.join(&cfg.run.name).join(format!("seed-{seed}"))
}

/// Trains one seed to completion, writing metrics and checkpoints under
/// `out/<name>/seed-<seed>/`.
pub fn run_training(cfg: &RunConfig, seed: u64, out: &Path) -> Result<RunOutputs> {
    let dir = seed_dir(out, cfg, seed);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()?).map_err(|e| Error::io(&cfg_path, e))?;
    let metrics = dir.join(format!("metrics.{}", cfg.run.log_format.extension()));
    let mut writer = MetricWriter::create(&metrics, cfg.run.log_format)?;
    let mut trainer = Trainer::new(cfg, seed)?;
    info!("{} seed {seed}: training for {} steps", cfg.run.name, cfg.run.total_steps);
    while !trainer.is_done() {
        let outcome = trainer.step()?;
        for rec in &outcome.records {
            writer.write(rec)?;
            if rec.kind == RecordKind::Eval {
                info!("{} seed {seed} step {}: eval return {:.3}", cfg.run.name, rec.step, rec.ret);
            }
        }
        let every = cfg.run.checkpoint_every;
        if every > 0 && trainer.steps() % every == 0 && !trainer.is_done() {
            let p = dir.join(format!("checkpoint-{}.bin", trainer.steps()));
            trainer.checkpoint().save(&p)?;
        }
    }
    writer.flush()?;
    let checkpoint = dir.join("final.bin");
    trainer.checkpoint().save(&checkpoint)?;
    Ok(RunOutputs {
        dir,
        metrics,
        checkpoint,
    })
}
