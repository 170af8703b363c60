//! Quantile machinery shared by the critics and actors: fixed quantile
//! fractions, the asymmetric Huber penalty, risk weightings over quantiles,
//! and the differentiable loss assemblies built on top of them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{CustomOp, Matrix, Tape, Var};

/// Midpoints `(2i - 1) / 2N` of `N` equal bins of `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePoints {
    taus: Vec<f64>,
}

impl QuantilePoints {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("number of quantiles must be at least 1"));
        }
        let taus = (1..=n).map(|i| (2 * i - 1) as f64 / (2 * n) as f64).collect();
        Ok(Self { taus })
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }
}

/// Quantile Huber penalty with threshold `kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileHuber {
    kappa: f64,
}

impl QuantileHuber {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::config(format!("huber threshold must be positive, got {kappa}")));
        }
        Ok(Self { kappa })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    #[inline]
    fn huber(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax <= self.kappa {
            0.5 * x * x
        } else {
            self.kappa * (ax - 0.5 * self.kappa)
        }
    }

    #[inline]
    fn huber_grad(&self, x: f64) -> f64 {
        if x.abs() <= self.kappa {
            x
        } else {
            self.kappa * x.signum()
        }
    }

    #[inline]
    fn weight(tau: f64, x: f64) -> f64 {
        if x < 0.0 {
            (tau - 1.0).abs()
        } else {
            tau.abs()
        }
    }

    /// `|tau - 1{x < 0}| * L_kappa(x)`.
    #[inline]
    pub fn loss(&self, x: f64, tau: f64) -> f64 {
        Self::weight(tau, x) * self.huber(x)
    }

    /// Derivative of [`Self::loss`] in `x`.
    #[inline]
    pub fn grad(&self, x: f64, tau: f64) -> f64 {
        Self::weight(tau, x) * self.huber_grad(x)
    }
}

pub fn quantile_huber(x: f64, tau: f64, kappa: f64) -> Result<f64> {
    Ok(QuantileHuber::new(kappa)?.loss(x, tau))
}

/// Risk sensitivity encoded as non-negative weights over the quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskProfile {
    betas: Vec<f64>,
    kind: RiskKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskKind {
    Neutral,
    Cvar(f64),
    Custom,
}

impl RiskProfile {
    pub fn neutral(n: usize) -> Result<Self> {
        Self::new(RiskKind::Neutral, n)
    }

    /// CVaR over the worst `eta` fraction. When `eta * n` is not an integer
    /// the boundary quantile receives the fractional remainder so the weights
    /// still sum to one.
    pub fn cvar(eta: f64, n: usize) -> Result<Self> {
        Self::new(RiskKind::Cvar(eta), n)
    }

    pub fn new(kind: RiskKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("risk profile needs at least one quantile"));
        }
        let betas = match kind {
            RiskKind::Neutral => vec![1.0 / n as f64; n],
            RiskKind::Cvar(eta) => {
                if !(eta > 0.0 && eta <= 1.0) {
                    return Err(Error::config(format!("cvar level must lie in (0, 1], got {eta}")));
                }
                let mut mass = eta * n as f64;
                if (mass - mass.round()).abs() < 1e-9 {
                    mass = mass.round();
                }
                let full = mass.floor() as usize;
                let w = 1.0 / (n as f64 * eta);
                let mut betas = vec![0.0; n];
                for b in betas.iter_mut().take(full) {
                    *b = w;
                }
                if full < n && mass > full as f64 {
                    betas[full] = (mass - full as f64) * w;
                }
                betas
            }
            RiskKind::Custom => {
                return Err(Error::config("custom risk profiles are built with RiskProfile::custom"))
            }
        };
        Ok(Self { betas, kind })
    }

    pub fn custom(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("custom risk profile is empty"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(Error::config(format!("risk weights must be non-negative, found {b}")));
        }
        Ok(Self {
            betas,
            kind: RiskKind::Custom,
        })
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn kind(&self) -> RiskKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// `sum_i beta_i * qbar_i` without length checks.
    #[inline]
    pub(crate) fn score(&self, qbar: &[f64]) -> f64 {
        self.betas.iter().zip(qbar).map(|(b, q)| b * q).sum()
    }
}

/// Risk profile as written in a configuration file: `"neutral"`,
/// `"cvar:<eta>"`, or an explicit list of weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RiskSpec {
    Named(String),
    Weights(Vec<f64>),
}

impl Default for RiskSpec {
    fn default() -> Self {
        RiskSpec::Named("neutral".into())
    }
}

impl RiskSpec {
    pub fn resolve(&self, n: usize) -> Result<RiskProfile> {
        match self {
            RiskSpec::Named(name) => {
                if name == "neutral" {
                    return RiskProfile::neutral(n);
                }
                let Some(level) = name.strip_prefix("cvar:") else {
                    return Err(Error::config(format!(
                        "agent.risk: expected \"neutral\", \"cvar:<eta>\" or a list, got {name:?}"
                    )));
                };
                let eta = f64::from_str(level.trim())
                    .map_err(|_| Error::config(format!("agent.risk: bad cvar level {level:?}")))?;
                RiskProfile::cvar(eta, n)
            }
            RiskSpec::Weights(w) => {
                if w.len() != n {
                    return Err(Error::config(format!(
                        "agent.risk: {} weights given for {n} quantiles",
                        w.len()
                    )));
                }
                RiskProfile::custom(w.clone())
            }
        }
    }
}

impl fmt::Display for RiskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RiskSpec::Named(s) => f.write_str(s),
            RiskSpec::Weights(w) => write!(f, "{w:?}"),
        }
    }
}

/// Risk-weighted average of ensemble-mean quantiles.
pub fn actor_objective(qbar: &[f64], profile: &RiskProfile) -> Result<f64> {
    if qbar.len() != profile.len() {
        return Err(Error::usage(format!(
            "{} quantiles given for a {}-quantile risk profile",
            qbar.len(),
            profile.len()
        )));
    }
    Ok(profile.score(qbar))
}

fn check_critic_inputs(pred: &Matrix, targets: &Matrix, qp: &QuantilePoints, weights: Option<&[f64]>) -> Result<()> {
    if pred.rows() == 0 {
        return Err(Error::usage("critic loss on an empty batch"));
    }
    if pred.shape() != targets.shape() || pred.cols() != qp.len() {
        return Err(Error::usage(format!(
            "critic loss shapes: predictions {:?}, targets {:?}, {} quantiles",
            pred.shape(),
            targets.shape(),
            qp.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != pred.rows() {
            return Err(Error::usage("one importance weight per sample required"));
        }
    }
    Ok(())
}

/// Distributional critic loss for one critic.
///
/// `pred[b][i]` is the critic's `i`-th quantile for sample `b`; `targets[b][j]`
/// is the complete Bellman target `r + gamma * target_j` (already masked for
/// terminals). The loss is the batch mean of
/// `(1/N^2) sum_i sum_j rho_{tau_i}(targets[b][j] - pred[b][i])`,
/// optionally scaled per sample by importance weights.
pub fn critic_loss(
    pred: &Matrix,
    targets: &Matrix,
    qp: &QuantilePoints,
    huber: &QuantileHuber,
    weights: Option<&[f64]>,
) -> Result<f64> {
    check_critic_inputs(pred, targets, qp, weights)?;
    let (b, n) = pred.shape();
    let mut total = 0.0;
    for r in 0..b {
        let mut s = 0.0;
        for (i, &tau) in qp.taus().iter().enumerate() {
            let q = pred.get(r, i);
            for &t in targets.row(r) {
                s += huber.loss(t - q, tau);
            }
        }
        total += weights.map_or(1.0, |w| w[r]) * s;
    }
    Ok(total / (b as f64 * (n * n) as f64))
}

/// Per-sample mean `|Delta_ij|` over quantile pairs.
pub fn td_magnitudes(pred: &Matrix, targets: &Matrix) -> Vec<f64> {
    let n = pred.cols();
    (0..pred.rows())
        .map(|r| {
            let mut s = 0.0;
            for &q in pred.row(r) {
                for &t in targets.row(r) {
                    s += (t - q).abs();
                }
            }
            s / (n * n) as f64
        })
        .collect()
}

struct CriticLossOp {
    targets: Matrix,
    taus: Vec<f64>,
    huber: QuantileHuber,
    weights: Option<Vec<f64>>,
}

impl CustomOp for CriticLossOp {
    fn backward(&self, inputs: &[&Matrix], _output: &Matrix, upstream: &Matrix) -> Vec<Matrix> {
        let pred = inputs[0];
        let (b, n) = pred.shape();
        let scale = upstream.get(0, 0) / (b as f64 * (n * n) as f64);
        let mut g = Matrix::zeros(b, n);
        for r in 0..b {
            let w = scale * self.weights.as_ref().map_or(1.0, |w| w[r]);
            for (i, &tau) in self.taus.iter().enumerate() {
                let q = pred.get(r, i);
                let mut d = 0.0;
                for &t in self.targets.row(r) {
                    d -= self.huber.grad(t - q, tau);
                }
                g.set(r, i, w * d);
            }
        }
        vec![g]
    }
}

/// [`critic_loss`] recorded on a tape, differentiable in `pred`.
pub fn critic_loss_node(
    tape: &mut Tape,
    pred: Var,
    targets: Matrix,
    qp: &QuantilePoints,
    huber: &QuantileHuber,
    weights: Option<Vec<f64>>,
) -> Result<Var> {
    let value = critic_loss(tape.value(pred), &targets, qp, huber, weights.as_deref())?;
    let op = CriticLossOp {
        targets,
        taus: qp.taus().to_vec(),
        huber: *huber,
        weights,
    };
    Ok(tape.custom(&[pred], Matrix::scalar(value), Box::new(op)))
}

/// Actor loss: negated batch mean of the risk-weighted quantile average.
/// `qbar` holds one row of ensemble-mean quantiles per sample.
pub fn actor_loss_node(tape: &mut Tape, qbar: Var, profile: &RiskProfile) -> Result<Var> {
    let rows = tape.value(qbar).rows();
    if rows == 0 {
        return Err(Error::usage("actor loss on an empty batch"));
    }
    let s = tape.weighted_sum(qbar, Matrix::row_vector(profile.betas().to_vec()))?;
    Ok(tape.scale(s, -1.0 / rows as f64))
}
