//! The ensemble agent: `K` deterministic actors, `M` quantile critics, their
//! target copies, and the action-selection and update rules that tie them
//! together.
//!
//! Internally actions live in a normalized box `[-1, 1]^d` (actor outputs are
//! tanh-squashed into it and critics consume it); the public API speaks the
//! environment's action units.

mod checkpoint;
mod config;

pub use checkpoint::Checkpoint;
pub use config::{ActorSelection, AgentConfig};

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::losses::{actor_loss_node, actor_objective, critic_loss, critic_loss_node, td_magnitudes, QuantileHuber, QuantilePoints, RiskProfile};
use crate::nn::{Adam, Matrix, Mlp, Tape};
use crate::replay::{Batch, Normalizer};
use crate::rng::Rng;

/// Which branch produced a training action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    /// Uniform random action during the initial data-collection phase.
    Random,
    /// Greedy actor output, with Gaussian noise unless in a suspension episode.
    Greedy,
    /// Best candidate along the uncertainty-ascent ray.
    Exploratory,
}

/// Uncertainty estimates attached to an inference-time action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyReport {
    /// Mean over quantiles of the across-critic variance.
    pub eu: f64,
    /// Mean over critics of the across-quantile variance.
    pub au: f64,
    /// `eu > u_max`.
    pub warned: bool,
    /// Fewer than two critics: `eu` is identically zero and carries no information.
    pub eu_degenerate: bool,
    /// Fewer than two quantiles: `au` is identically zero.
    pub au_degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct ExploreOutcome {
    pub action: Vec<f64>,
    /// The uncertainty gradient vanished; `action` is the noised greedy action.
    pub fallback: bool,
}

/// Diagnostics from one gradient pass.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub critic_losses: Vec<f64>,
    pub actor_losses: Vec<f64>,
    /// Per sample, mean `|Delta_ij|` over quantile pairs and critics.
    pub td_errors: Vec<f64>,
    /// The Bellman target matrix handed to each critic's loss.
    pub critic_targets: Vec<Matrix>,
}

impl TrainReport {
    pub fn critic_loss(&self) -> f64 {
        mean(&self.critic_losses)
    }

    pub fn actor_loss(&self) -> f64 {
        mean(&self.actor_losses)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Losses and flattened parameter gradients for one minibatch, evaluated
/// without changing any parameters.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub critic_losses: Vec<f64>,
    pub critic_grads: Vec<Vec<f64>>,
    pub actor_losses: Vec<f64>,
    pub actor_grads: Vec<Vec<f64>>,
}

/// Minibatch converted to network units.
struct Prepared {
    states: Matrix,
    actions: Matrix,
    rewards: Vec<f64>,
    next_states: Matrix,
    not_done: Vec<f64>,
    weights: Option<Vec<f64>>,
}

pub struct Agent {
    cfg: AgentConfig,
    spec: EnvSpec,
    center: Vec<f64>,
    half: Vec<f64>,
    qp: QuantilePoints,
    huber: QuantileHuber,
    profile: RiskProfile,
    actors: Vec<Mlp>,
    critics: Vec<Mlp>,
    target_actors: Vec<Mlp>,
    target_critics: Vec<Mlp>,
    actor_opt: Vec<Adam>,
    critic_opt: Vec<Adam>,
    normalizer: Option<Normalizer>,
    rng: Rng,
    suspended: bool,
    episode_actor: Option<usize>,
}

impl Agent {
    /// Draws all actors, then all critics, from `init_rng`; targets start as
    /// exact copies. `action_rng` drives every stochastic action decision.
    pub fn new(cfg: AgentConfig, spec: EnvSpec, init_rng: &mut Rng, action_rng: Rng) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        let actor_dims = Self::actor_dims(&cfg, &spec);
        let critic_dims = Self::critic_dims(&cfg, &spec);
        let actors = (0..cfg.actors)
            .map(|_| Mlp::init_gaussian(&actor_dims, cfg.init_std, init_rng))
            .collect::<Result<Vec<_>>>()?;
        let critics = (0..cfg.critics)
            .map(|_| Mlp::init_gaussian(&critic_dims, cfg.init_std, init_rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_networks(cfg, spec, actors, critics, action_rng)
    }

    /// Assembles an agent from given networks; targets are copies.
    pub fn from_networks(
        cfg: AgentConfig,
        spec: EnvSpec,
        actors: Vec<Mlp>,
        critics: Vec<Mlp>,
        action_rng: Rng,
    ) -> Result<Self> {
        let (ta, tc) = (actors.clone(), critics.clone());
        Self::from_parts(cfg, spec, actors, critics, ta, tc, None, action_rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        cfg: AgentConfig,
        spec: EnvSpec,
        actors: Vec<Mlp>,
        critics: Vec<Mlp>,
        target_actors: Vec<Mlp>,
        target_critics: Vec<Mlp>,
        normalizer: Option<Normalizer>,
        action_rng: Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        if actors.len() != cfg.actors || critics.len() != cfg.critics {
            return Err(Error::usage("network counts do not match the configuration"));
        }
        if target_actors.len() != actors.len() || target_critics.len() != critics.len() {
            return Err(Error::usage("target network counts do not match"));
        }
        let (sd, ad, n) = (spec.state_dim, spec.action_dim, cfg.quantiles);
        for (a, t) in actors.iter().zip(&target_actors) {
            if a.input_dim() != sd || a.output_dim() != ad || t.dims() != a.dims() {
                return Err(Error::usage(format!("actor shape {:?} does not fit the environment", a.dims())));
            }
        }
        for (c, t) in critics.iter().zip(&target_critics) {
            if c.input_dim() != sd + ad || c.output_dim() != n || t.dims() != c.dims() {
                return Err(Error::usage(format!("critic shape {:?} does not fit the environment", c.dims())));
            }
        }
        if let Some(norm) = &normalizer {
            if norm.state_dim() != sd {
                return Err(Error::usage("normalizer does not match the state dimension"));
            }
        }
        let center = spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(l, h)| 0.5 * (l + h))
            .collect();
        let half = spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(l, h)| 0.5 * (h - l))
            .collect();
        Ok(Self {
            qp: QuantilePoints::new(n)?,
            huber: QuantileHuber::new(cfg.kappa)?,
            profile: cfg.risk.resolve(n)?,
            actor_opt: actors.iter().map(|a| Adam::new(a.params().len(), cfg.actor_lr)).collect(),
            critic_opt: critics.iter().map(|c| Adam::new(c.params().len(), cfg.critic_lr)).collect(),
            actors,
            critics,
            target_actors,
            target_critics,
            normalizer,
            rng: action_rng,
            suspended: false,
            episode_actor: None,
            center,
            half,
            cfg,
            spec,
        })
    }

    fn actor_dims(cfg: &AgentConfig, spec: &EnvSpec) -> Vec<usize> {
        let mut d = vec![spec.state_dim];
        d.extend(&cfg.hidden);
        d.push(spec.action_dim);
        d
    }

    fn critic_dims(cfg: &AgentConfig, spec: &EnvSpec) -> Vec<usize> {
        let mut d = vec![spec.state_dim + spec.action_dim];
        d.extend(&cfg.hidden);
        d.push(cfg.quantiles);
        d
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn env_spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn risk_profile(&self) -> &RiskProfile {
        &self.profile
    }

    pub fn quantile_points(&self) -> &QuantilePoints {
        &self.qp
    }

    pub fn actors(&self) -> &[Mlp] {
        &self.actors
    }

    pub fn critics(&self) -> &[Mlp] {
        &self.critics
    }

    pub fn target_actors(&self) -> &[Mlp] {
        &self.target_actors
    }

    pub fn target_critics(&self) -> &[Mlp] {
        &self.target_critics
    }

    pub fn actors_mut(&mut self) -> &mut [Mlp] {
        &mut self.actors
    }

    pub fn critics_mut(&mut self) -> &mut [Mlp] {
        &mut self.critics
    }

    pub fn target_actors_mut(&mut self) -> &mut [Mlp] {
        &mut self.target_actors
    }

    pub fn target_critics_mut(&mut self) -> &mut [Mlp] {
        &mut self.target_critics
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    /// Fixes the normalization statistics. They cannot be replaced afterwards.
    pub fn set_normalizer(&mut self, normalizer: Normalizer) -> Result<()> {
        if self.normalizer.is_some() {
            return Err(Error::usage("normalizer is already frozen"));
        }
        if normalizer.state_dim() != self.spec.state_dim {
            return Err(Error::usage("normalizer does not match the state dimension"));
        }
        self.normalizer = Some(normalizer);
        Ok(())
    }

    // ---- unit conversions ---------------------------------------------------

    fn check_state(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.spec.state_dim {
            return Err(Error::usage(format!(
                "state has {} entries, environment declares {}",
                s.len(),
                self.spec.state_dim
            )));
        }
        Ok(())
    }

    fn check_action(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.spec.action_dim {
            return Err(Error::usage(format!(
                "action has {} entries, environment declares {}",
                a.len(),
                self.spec.action_dim
            )));
        }
        Ok(())
    }

    fn norm_state(&self, s: &[f64]) -> Vec<f64> {
        match &self.normalizer {
            Some(n) => n.normalize_state(s),
            None => s.to_vec(),
        }
    }

    fn to_env(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.center).zip(&self.half).map(|((u, c), h)| c + h * u).collect()
    }

    fn from_env(&self, a: &[f64]) -> Vec<f64> {
        a.iter().zip(&self.center).zip(&self.half).map(|((a, c), h)| (a - c) / h).collect()
    }

    // ---- ensemble evaluation ------------------------------------------------

    fn policy(actor: &Mlp, states: &Matrix) -> Matrix {
        let mut out = actor.forward_batch(states).expect("actor input width checked");
        out.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
        out
    }

    fn quantiles(critics: &[Mlp], states: &Matrix, actions: &Matrix) -> Vec<Matrix> {
        let x = states.hcat(actions);
        critics
            .iter()
            .map(|c| c.forward_batch(&x).expect("critic input width checked"))
            .collect()
    }

    fn ensemble_mean(outs: &[Matrix]) -> Matrix {
        let mut acc = outs[0].clone();
        for o in &outs[1..] {
            for (a, b) in acc.as_mut_slice().iter_mut().zip(o.as_slice()) {
                *a += b;
            }
        }
        let m = outs.len() as f64;
        acc.as_mut_slice().iter_mut().for_each(|v| *v /= m);
        acc
    }

    fn eu_row(outs: &[Matrix], row: usize) -> f64 {
        let m = outs.len() as f64;
        let n = outs[0].cols();
        let mut total = 0.0;
        for i in 0..n {
            let mu = outs.iter().map(|o| o.get(row, i)).sum::<f64>() / m;
            total += outs.iter().map(|o| (o.get(row, i) - mu).powi(2)).sum::<f64>() / m;
        }
        total / n as f64
    }

    fn au_row(outs: &[Matrix], row: usize) -> f64 {
        let mut total = 0.0;
        for o in outs {
            let q = o.row(row);
            let mu = q.iter().sum::<f64>() / q.len() as f64;
            total += q.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / q.len() as f64;
        }
        total / outs.len() as f64
    }

    /// Index of the highest risk-weighted score, lowest index on ties.
    fn argmax(scores: impl Iterator<Item = f64>) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, s) in scores.enumerate() {
            if s > best.1 || k == 0 {
                best = (k, s);
            }
        }
        best.0
    }

    /// Best actor for one normalized state and its normalized action.
    fn best_actor(&self, actors: &[Mlp], critics: &[Mlp], s: &[f64]) -> (usize, Vec<f64>) {
        let k = actors.len();
        let s1 = Matrix::row_vector(s.to_vec());
        if k == 1 {
            return (0, Self::policy(&actors[0], &s1).into_vec());
        }
        let rows: Vec<Vec<f64>> = actors.iter().map(|a| Self::policy(a, &s1).into_vec()).collect();
        let states = Matrix::from_rows(&vec![s.to_vec(); k]);
        let actions = Matrix::from_rows(&rows);
        let qbar = Self::ensemble_mean(&Self::quantiles(critics, &states, &actions));
        let best = Self::argmax((0..k).map(|r| self.profile.score(qbar.row(r))));
        (best, rows[best].clone())
    }

    /// Ensemble-mean quantiles at `(s, a)`.
    pub fn qbar(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.check_state(s)?;
        self.check_action(a)?;
        let states = Matrix::row_vector(self.norm_state(s));
        let actions = Matrix::row_vector(self.from_env(a));
        Ok(Self::ensemble_mean(&Self::quantiles(&self.critics, &states, &actions)).into_vec())
    }

    /// Actor whose action maximizes the risk-weighted ensemble mean under the
    /// trained networks.
    pub fn select_greedy_actor(&self, s: &[f64]) -> Result<usize> {
        self.check_state(s)?;
        Ok(self.best_actor(&self.actors, &self.critics, &self.norm_state(s)).0)
    }

    /// Same selection made with the target networks.
    pub fn select_target_actor(&self, s: &[f64]) -> Result<usize> {
        self.check_state(s)?;
        Ok(self.best_actor(&self.target_actors, &self.target_critics, &self.norm_state(s)).0)
    }

    /// Greedy action `mu(s | theta_k**)` in environment units.
    pub fn greedy_action(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_state(s)?;
        let (_, u) = self.best_actor(&self.actors, &self.critics, &self.norm_state(s));
        Ok(self.to_env(&u))
    }

    fn critic_outputs_at(&self, s: &[f64], a: &[f64]) -> Result<Vec<Matrix>> {
        self.check_state(s)?;
        self.check_action(a)?;
        let states = Matrix::row_vector(self.norm_state(s));
        let actions = Matrix::row_vector(self.from_env(a));
        Ok(Self::quantiles(&self.critics, &states, &actions))
    }

    /// Across-critic population variance, averaged over quantiles. Zero for a
    /// single critic.
    pub fn epistemic_uncertainty(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(Self::eu_row(&self.critic_outputs_at(s, a)?, 0))
    }

    /// Across-quantile population variance, averaged over critics. Zero for a
    /// single quantile.
    pub fn aleatoric_uncertainty(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(Self::au_row(&self.critic_outputs_at(s, a)?, 0))
    }

    /// Gradient of the epistemic uncertainty with respect to the normalized
    /// action `u`, at normalized state `s`.
    fn eu_gradient_norm(&self, s: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let sv = tape.constant(Matrix::row_vector(s.to_vec()));
        let uv = tape.param(Matrix::row_vector(u.to_vec()));
        let x = tape.hcat(sv, uv)?;
        let mut outs = Vec::with_capacity(self.critics.len());
        for c in &self.critics {
            let bound = c.bind(&mut tape, false);
            outs.push(bound.forward(&mut tape, x)?);
        }
        let m = outs.len() as f64;
        let mut sum = outs[0];
        for &o in &outs[1..] {
            sum = tape.add(sum, o)?;
        }
        let mu = tape.scale(sum, 1.0 / m);
        let mut sq_total = None;
        for &o in &outs {
            let d = tape.sub(o, mu)?;
            let sq = tape.mul(d, d)?;
            sq_total = Some(match sq_total {
                None => sq,
                Some(t) => tape.add(t, sq)?,
            });
        }
        let total = tape.sum(sq_total.expect("at least one critic"));
        let eu = tape.scale(total, 1.0 / (m * self.cfg.quantiles as f64));
        let grads = tape.backward(eu)?;
        Ok(grads
            .get(uv)
            .map(|g| g.as_slice().to_vec())
            .unwrap_or_else(|| vec![0.0; u.len()]))
    }

    /// Gradient of the epistemic uncertainty with respect to the action, in
    /// environment units.
    pub fn eu_gradient(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.check_state(s)?;
        self.check_action(a)?;
        let g = self.eu_gradient_norm(&self.norm_state(s), &self.from_env(a))?;
        Ok(g.iter().zip(&self.half).map(|(g, h)| g / h).collect())
    }

    fn noised(&mut self, u: &[f64]) -> Vec<f64> {
        let mut a = self.to_env(u);
        for x in a.iter_mut() {
            let e: f64 = self.rng.sample(StandardNormal);
            *x += self.cfg.action_noise_std * e;
        }
        self.spec.clip(&mut a);
        a
    }

    /// Line search along the uncertainty-ascent direction from the normalized
    /// greedy action `ug`.
    fn explore_from(&mut self, s: &[f64], ug: &[f64]) -> Result<ExploreOutcome> {
        let v = self.eu_gradient_norm(s, ug)?;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Ok(ExploreOutcome {
                action: self.noised(ug),
                fallback: true,
            });
        }
        let l = self.cfg.line_search_points;
        let extent = self.cfg.ray_extent;
        let candidates: Vec<Vec<f64>> = (0..l)
            .map(|i| {
                let c = if l == 1 { 0.0 } else { extent * i as f64 / (l - 1) as f64 };
                ug.iter()
                    .zip(&v)
                    .map(|(u, vi)| (u + c * vi / norm).clamp(-1.0, 1.0))
                    .collect()
            })
            .collect();
        let states = Matrix::from_rows(&vec![s.to_vec(); l]);
        let actions = Matrix::from_rows(&candidates);
        let outs = Self::quantiles(&self.critics, &states, &actions);
        let best = Self::argmax((0..l).map(|r| Self::eu_row(&outs, r)));
        Ok(ExploreOutcome {
            action: self.to_env(&candidates[best]),
            fallback: false,
        })
    }

    /// Uncertainty-seeking action for state `s` (environment units).
    pub fn exploratory_action(&mut self, s: &[f64]) -> Result<ExploreOutcome> {
        self.check_state(s)?;
        let sn = self.norm_state(s);
        let (_, ug) = self.best_actor(&self.actors, &self.critics, &sn);
        self.explore_from(&sn, &ug)
    }

    /// Called at the start of each training episode (0-based index).
    pub fn begin_episode(&mut self, episode: u64) {
        self.suspended = matches!(self.cfg.suspension_period, Some(p) if (episode + 1) % p == 0);
        self.episode_actor = match self.cfg.actor_selection {
            ActorSelection::RandomPerEpisode => Some(self.rng.random_range(0..self.cfg.actors)),
            _ => None,
        };
    }

    /// Whether the current episode runs without noise or exploration.
    pub fn is_suspended(&self) -> bool {
        self.suspended
    }

    /// Behaviour policy at environment step `t`.
    pub fn act_training(&mut self, s: &[f64], t: u64) -> Result<(Vec<f64>, ActionKind)> {
        self.check_state(s)?;
        if t < self.cfg.random_steps {
            let a = self
                .spec
                .action_low
                .iter()
                .zip(&self.spec.action_high)
                .map(|(&lo, &hi)| self.rng.random_range(lo..hi))
                .collect();
            return Ok((a, ActionKind::Random));
        }
        let sn = self.norm_state(s);
        let ug = match self.cfg.actor_selection {
            ActorSelection::Greedy => self.best_actor(&self.actors, &self.critics, &sn).1,
            ActorSelection::RandomPerStep => {
                let k = self.rng.random_range(0..self.cfg.actors);
                Self::policy(&self.actors[k], &Matrix::row_vector(sn.clone())).into_vec()
            }
            ActorSelection::RandomPerEpisode => {
                let k = self.episode_actor.unwrap_or(0);
                Self::policy(&self.actors[k], &Matrix::row_vector(sn.clone())).into_vec()
            }
        };
        if self.suspended {
            return Ok((self.to_env(&ug), ActionKind::Greedy));
        }
        let p = self.cfg.exploration_rate(t);
        let alpha: f64 = self.rng.random();
        if alpha >= p {
            return Ok((self.noised(&ug), ActionKind::Greedy));
        }
        let out = self.explore_from(&sn, &ug)?;
        let kind = if out.fallback { ActionKind::Greedy } else { ActionKind::Exploratory };
        Ok((out.action, kind))
    }

    /// Deterministic greedy action plus uncertainty report.
    pub fn act_inference(&self, s: &[f64]) -> Result<(Vec<f64>, UncertaintyReport)> {
        self.check_state(s)?;
        let sn = self.norm_state(s);
        let (_, u) = self.best_actor(&self.actors, &self.critics, &sn);
        let outs = Self::quantiles(&self.critics, &Matrix::row_vector(sn), &Matrix::row_vector(u.clone()));
        let eu = Self::eu_row(&outs, 0);
        let au = Self::au_row(&outs, 0);
        Ok((
            self.to_env(&u),
            UncertaintyReport {
                eu,
                au,
                warned: eu > self.cfg.u_max,
                eu_degenerate: self.cfg.critics < 2,
                au_degenerate: self.cfg.quantiles < 2,
            },
        ))
    }

    // ---- learning -----------------------------------------------------------

    fn prepare(&self, batch: &Batch<'_>) -> Result<Prepared> {
        let norm = self
            .normalizer
            .as_ref()
            .ok_or_else(|| Error::usage("train_step called before the normalizer was frozen"))?;
        if batch.is_empty() {
            return Err(Error::usage("train_step on an empty batch"));
        }
        let b = batch.len();
        let (sd, ad) = (self.spec.state_dim, self.spec.action_dim);
        let mut states = Matrix::zeros(b, sd);
        let mut next_states = Matrix::zeros(b, sd);
        let mut actions = Matrix::zeros(b, ad);
        let mut rewards = Vec::with_capacity(b);
        let mut not_done = Vec::with_capacity(b);
        for (r, t) in batch.transitions.iter().enumerate() {
            if t.state.len() != sd || t.next_state.len() != sd || t.action.len() != ad {
                return Err(Error::usage("transition does not match the environment dimensions"));
            }
            norm.normalize_state_into(&t.state, states.row_mut(r));
            norm.normalize_state_into(&t.next_state, next_states.row_mut(r));
            for ((o, a), (c, h)) in actions.row_mut(r).iter_mut().zip(&t.action).zip(self.center.iter().zip(&self.half)) {
                *o = (a - c) / h;
            }
            rewards.push(norm.normalize_reward(t.reward));
            not_done.push(if t.done { 0.0 } else { 1.0 });
        }
        Ok(Prepared {
            states,
            actions,
            rewards,
            next_states,
            not_done,
            weights: batch.weights.clone(),
        })
    }

    /// Shared Bellman targets `r + gamma * (1 - done) * target_j(s')`.
    fn bellman_targets(&self, data: &Prepared) -> Matrix {
        let b = data.states.rows();
        let n = self.cfg.quantiles;
        let qbars: Vec<Matrix> = self
            .target_actors
            .iter()
            .map(|actor| {
                let u = Self::policy(actor, &data.next_states);
                Self::ensemble_mean(&Self::quantiles(&self.target_critics, &data.next_states, &u))
            })
            .collect();
        let mut targets = Matrix::zeros(b, n);
        for r in 0..b {
            let k = Self::argmax(qbars.iter().map(|q| self.profile.score(q.row(r))));
            let disc = self.cfg.gamma * data.not_done[r];
            for (o, &q) in targets.row_mut(r).iter_mut().zip(qbars[k].row(r)) {
                *o = data.rewards[r] + disc * q;
            }
        }
        targets
    }

    /// Bellman targets for `batch` as used by the critic update.
    pub fn compute_targets(&self, batch: &Batch<'_>) -> Result<Matrix> {
        Ok(self.bellman_targets(&self.prepare(batch)?))
    }

    fn critic_gradients(&self, data: &Prepared, targets: &Matrix) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>, Vec<Matrix>)> {
        let b = data.states.rows();
        let mut tape = Tape::new();
        let x = tape.constant(data.states.hcat(&data.actions));
        let mut bounds = Vec::with_capacity(self.critics.len());
        let mut losses = Vec::with_capacity(self.critics.len());
        let mut loss_values = Vec::with_capacity(self.critics.len());
        let mut td = vec![0.0; b];
        let mut used = Vec::with_capacity(self.critics.len());
        for c in &self.critics {
            let bound = c.bind(&mut tape, true);
            let pred = bound.forward(&mut tape, x)?;
            let t = targets.clone();
            for (acc, d) in td.iter_mut().zip(td_magnitudes(tape.value(pred), &t)) {
                *acc += d / self.critics.len() as f64;
            }
            used.push(t.clone());
            let loss = critic_loss_node(&mut tape, pred, t, &self.qp, &self.huber, data.weights.clone())?;
            loss_values.push(tape.value(loss).get(0, 0));
            losses.push(loss);
            bounds.push(bound);
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = tape.add(total, l)?;
        }
        let grads = tape.backward(total)?;
        let flat = bounds.iter().map(|bd| bd.gradient(&grads)).collect();
        Ok((loss_values, flat, td, used))
    }

    fn actor_gradients(&self, states: &Matrix) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let s = tape.constant(states.clone());
        let critics: Vec<_> = self.critics.iter().map(|c| c.bind(&mut tape, false)).collect();
        let inv_m = 1.0 / critics.len() as f64;
        let mut bounds = Vec::with_capacity(self.actors.len());
        let mut losses = Vec::with_capacity(self.actors.len());
        let mut loss_values = Vec::with_capacity(self.actors.len());
        for a in &self.actors {
            let bound = a.bind(&mut tape, true);
            let z = bound.forward(&mut tape, s)?;
            let u = tape.tanh(z);
            let x = tape.hcat(s, u)?;
            let mut sum = None;
            for c in &critics {
                let q = c.forward(&mut tape, x)?;
                sum = Some(match sum {
                    None => q,
                    Some(acc) => tape.add(acc, q)?,
                });
            }
            let qbar = tape.scale(sum.expect("at least one critic"), inv_m);
            let loss = actor_loss_node(&mut tape, qbar, &self.profile)?;
            loss_values.push(tape.value(loss).get(0, 0));
            losses.push(loss);
            bounds.push(bound);
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = tape.add(total, l)?;
        }
        let grads = tape.backward(total)?;
        let flat = bounds.iter().map(|bd| bd.gradient(&grads)).collect();
        Ok((loss_values, flat))
    }

    fn apply_critics(&mut self, grads: &[Vec<f64>]) -> Result<()> {
        for ((c, opt), g) in self.critics.iter_mut().zip(&mut self.critic_opt).zip(grads) {
            opt.step(c.params_mut(), g)?;
        }
        Ok(())
    }

    fn apply_actors(&mut self, grads: &[Vec<f64>]) -> Result<()> {
        for ((a, opt), g) in self.actors.iter_mut().zip(&mut self.actor_opt).zip(grads) {
            opt.step(a.params_mut(), g)?;
        }
        Ok(())
    }

    /// One gradient pass: shared Bellman targets from the target networks,
    /// then a critic step and an actor step. Both losses are evaluated with
    /// the parameters as they were before this pass.
    pub fn train_step(&mut self, batch: &Batch<'_>) -> Result<TrainReport> {
        let data = self.prepare(batch)?;
        let targets = self.bellman_targets(&data);
        let (critic_losses, critic_grads, td_errors, critic_targets) = self.critic_gradients(&data, &targets)?;
        let (actor_losses, actor_grads) = self.actor_gradients(&data.states)?;
        self.apply_critics(&critic_grads)?;
        self.apply_actors(&actor_grads)?;
        Ok(TrainReport {
            critic_losses,
            actor_losses,
            td_errors,
            critic_targets,
        })
    }

    /// Critic and actor losses with their analytic gradients.
    pub fn loss_gradients(&self, batch: &Batch<'_>) -> Result<LossGradients> {
        let data = self.prepare(batch)?;
        let targets = self.bellman_targets(&data);
        let (critic_losses, critic_grads, _, _) = self.critic_gradients(&data, &targets)?;
        let (actor_losses, actor_grads) = self.actor_gradients(&data.states)?;
        Ok(LossGradients {
            critic_losses,
            critic_grads,
            actor_losses,
            actor_grads,
        })
    }

    /// Critic and actor losses by plain forward evaluation (no tape).
    pub fn losses(&self, batch: &Batch<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
        let data = self.prepare(batch)?;
        let targets = self.bellman_targets(&data);
        let preds = Self::quantiles(&self.critics, &data.states, &data.actions);
        let critic = preds
            .iter()
            .map(|p| critic_loss(p, &targets, &self.qp, &self.huber, data.weights.as_deref()))
            .collect::<Result<Vec<_>>>()?;
        let b = data.states.rows() as f64;
        let actor = self
            .actors
            .iter()
            .map(|a| {
                let u = Self::policy(a, &data.states);
                let qbar = Self::ensemble_mean(&Self::quantiles(&self.critics, &data.states, &u));
                let total = (0..qbar.rows())
                    .map(|r| actor_objective(qbar.row(r), &self.profile))
                    .sum::<Result<f64>>()?;
                Ok(-total / b)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((critic, actor))
    }

    /// Critic update alone; actors are untouched.
    pub fn critic_step(&mut self, batch: &Batch<'_>) -> Result<Vec<f64>> {
        let data = self.prepare(batch)?;
        let targets = self.bellman_targets(&data);
        let (losses, grads, _, _) = self.critic_gradients(&data, &targets)?;
        self.apply_critics(&grads)?;
        Ok(losses)
    }

    /// Actor update alone; critics are held fixed.
    pub fn actor_step(&mut self, batch: &Batch<'_>) -> Result<Vec<f64>> {
        let data = self.prepare(batch)?;
        let (losses, grads) = self.actor_gradients(&data.states)?;
        self.apply_actors(&grads)?;
        Ok(losses)
    }

    /// Polyak-averages every target network toward its trained counterpart.
    pub fn update_targets(&mut self) {
        let keep = self.cfg.polyak;
        for (t, a) in self.target_actors.iter_mut().zip(&self.actors) {
            t.soft_update_from(a, keep).expect("shapes fixed at construction");
        }
        for (t, c) in self.target_critics.iter_mut().zip(&self.critics) {
            t.soft_update_from(c, keep).expect("shapes fixed at construction");
        }
    }
}
