use rand::Rng as _;

use super::{Env, EnvSpec, StepResult};
use crate::rng::Rng;

/// Fixed geometry of the cube task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeGeometry {
    pub reward_center: [f64; 3],
    pub reward_radius: f64,
    pub goal_center: [f64; 3],
    pub goal_radius: f64,
    pub max_speed: f64,
    pub horizon: usize,
    /// Initial positions are uniform over `[-1, -1 + start_spread]^3`.
    pub start_spread: f64,
    pub inside_reward: f64,
    pub outside_reward: f64,
}

impl Default for CubeGeometry {
    fn default() -> Self {
        Self {
            reward_center: [-0.5, -0.5, -0.5],
            reward_radius: 0.2,
            goal_center: [0.3, 0.2, 0.1],
            goal_radius: 0.06,
            max_speed: 0.05,
            horizon: 200,
            start_spread: 0.1,
            inside_reward: -0.1,
            outside_reward: -0.2,
        }
    }
}

/// Wraps a coordinate onto the period-2 circle `[-1, 1)`.
pub(crate) fn wrap(x: f64) -> f64 {
    (x + 1.0).rem_euclid(2.0) - 1.0
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Point agent moving through the periodic cube `[-1, 1]^3`.
///
/// The reward is `-0.1` inside the attractive ball and `-0.2` elsewhere; an
/// episode ends on entering the small goal ball. Membership uses plain
/// Euclidean distance, which equals the torus minimum-image distance because
/// both balls sit further than their radius from every face.
pub struct CubeEnv {
    geometry: CubeGeometry,
    spec: EnvSpec,
    position: [f64; 3],
    steps: usize,
    rng: Rng,
}

impl CubeEnv {
    pub fn new(rng: Rng) -> Self {
        Self::with_geometry(CubeGeometry::default(), rng)
    }

    pub fn with_geometry(geometry: CubeGeometry, rng: Rng) -> Self {
        let v = geometry.max_speed;
        Self {
            spec: EnvSpec {
                state_dim: 3,
                action_dim: 3,
                action_low: vec![-v; 3],
                action_high: vec![v; 3],
                max_episode_steps: geometry.horizon,
            },
            geometry,
            position: [-1.0; 3],
            steps: 0,
            rng,
        }
    }

    pub fn geometry(&self) -> &CubeGeometry {
        &self.geometry
    }

    pub fn position(&self) -> [f64; 3] {
        self.position
    }

    /// Places the agent directly; the step counter is left untouched.
    pub fn set_position(&mut self, p: [f64; 3]) {
        self.position = p.map(wrap);
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn reward_at(&self, p: &[f64; 3]) -> f64 {
        if distance(p, &self.geometry.reward_center) < self.geometry.reward_radius {
            self.geometry.inside_reward
        } else {
            self.geometry.outside_reward
        }
    }

    pub fn in_goal(&self, p: &[f64; 3]) -> bool {
        distance(p, &self.geometry.goal_center) < self.geometry.goal_radius
    }
}

impl Env for CubeEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        let spread = self.geometry.start_spread;
        for x in self.position.iter_mut() {
            *x = -1.0 + spread * self.rng.random::<f64>();
        }
        self.steps = 0;
        self.position.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let mut v = action.to_vec();
        let clipped = self.spec.clip(&mut v);
        if clipped {
            log::debug!("cube: clipped out-of-range action {action:?}");
        }
        for (x, dv) in self.position.iter_mut().zip(&v) {
            *x = wrap(*x + dv);
        }
        self.steps += 1;
        let reward = self.reward_at(&self.position);
        let done = self.in_goal(&self.position);
        StepResult {
            next_state: self.position.to_vec(),
            reward,
            done,
            truncated: !done && self.steps >= self.geometry.horizon,
            clipped,
        }
    }
}
