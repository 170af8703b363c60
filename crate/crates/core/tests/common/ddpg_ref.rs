//! Plain single-actor, single-critic DDPG written without the crate's
//! autodiff, losses or agent code. Used to cross-check the degenerate
//! ensemble configuration step by step.

use rand::Rng;
use rand_distr::StandardNormal;
use uaddpg::envs::{CubeEnv, Env};
use uaddpg::rng::{stream, Rng as ChaRng, Stream};

#[derive(Clone)]
pub struct Net {
    pub dims: Vec<usize>,
    pub p: Vec<f64>,
}

impl Net {
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        let mut v = Vec::new();
        for l in 0..self.dims.len() - 1 {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            v.push((off, off + i * o));
            off += i * o + o;
        }
        v
    }

    /// Returns every layer's activations, input first.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let layers = self.offsets();
        for (l, &(w, b)) in layers.iter().enumerate() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let prev = &acts[l];
            let mut z = vec![0.0; o];
            for r in 0..o {
                let mut s = self.p[b + r];
                for c in 0..i {
                    s += self.p[w + r * i + c] * prev[c];
                }
                z[r] = if l + 1 < layers.len() { s.tanh() } else { s };
            }
            acts.push(z);
        }
        acts
    }

    pub fn out(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).pop().unwrap()
    }

    /// Accumulates d(out . dout)/dparams into `grad`; returns d/dinput.
    fn backward(&self, acts: &[Vec<f64>], dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let layers = self.offsets();
        let mut delta = dout.to_vec();
        for l in (0..layers.len()).rev() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let (w, b) = layers[l];
            if l + 1 < layers.len() {
                for r in 0..o {
                    delta[r] *= 1.0 - acts[l + 1][r] * acts[l + 1][r];
                }
            }
            let mut din = vec![0.0; i];
            for r in 0..o {
                grad[b + r] += delta[r];
                for c in 0..i {
                    grad[w + r * i + c] += delta[r] * acts[l][c];
                    din[c] += self.p[w + r * i + c] * delta[r];
                }
            }
            delta = din;
        }
        delta
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn apply(&mut self, p: &mut [f64], g: &[f64]) {
        self.t += 1;
        let (b1, b2) = (0.9f64, 0.999f64);
        for k in 0..p.len() {
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g[k];
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g[k] * g[k];
            let mh = self.m[k] / (1.0 - b1.powi(self.t));
            let vh = self.v[k] / (1.0 - b2.powi(self.t));
            p[k] -= self.lr * mh / (vh.sqrt() + 1e-8);
        }
    }
}

pub struct Hyper {
    pub gamma: f64,
    pub polyak: f64,
    pub noise: f64,
    pub random_steps: u64,
    pub lr: f64,
    pub batch: usize,
    pub kappa: f64,
}

struct Tr {
    s: Vec<f64>,
    a: Vec<f64>,
    r: f64,
    s2: Vec<f64>,
    done: bool,
}

pub struct RefDdpg {
    pub actor: Net,
    pub critic: Net,
    pub actor_t: Net,
    pub critic_t: Net,
    opt_a: Adam,
    opt_c: Adam,
    h: Hyper,
    env: CubeEnv,
    act_rng: ChaRng,
    rep_rng: ChaRng,
    buf: Vec<Tr>,
    mean: Vec<f64>,
    std: Vec<f64>,
    state: Vec<f64>,
    t: u64,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl RefDdpg {
    pub fn new(actor: Net, critic: Net, h: Hyper, seed: u64) -> Self {
        let mut env = CubeEnv::new(stream(seed, Stream::Env));
        let spec = env.spec().clone();
        let state = env.reset();
        Self {
            opt_a: Adam::new(actor.p.len(), h.lr),
            opt_c: Adam::new(critic.p.len(), h.lr),
            actor_t: actor.clone(),
            critic_t: critic.clone(),
            actor,
            critic,
            h,
            env,
            act_rng: stream(seed, Stream::Action),
            rep_rng: stream(seed, Stream::Replay),
            buf: Vec::new(),
            mean: vec![],
            std: vec![],
            state,
            t: 0,
            lo: spec.action_low,
            hi: spec.action_high,
        }
    }

    fn norm(&self, s: &[f64]) -> Vec<f64> {
        s.iter().zip(&self.mean).zip(&self.std).map(|((x, m), d)| (x - m) / d).collect()
    }

    fn policy(&self, net: &Net, sn: &[f64]) -> Vec<f64> {
        net.out(sn).iter().map(|z| z.tanh()).collect()
    }

    fn to_env(&self, u: &[f64]) -> Vec<f64> {
        (0..u.len())
            .map(|d| 0.5 * (self.lo[d] + self.hi[d]) + 0.5 * (self.hi[d] - self.lo[d]) * u[d])
            .collect()
    }

    fn to_unit(&self, a: &[f64]) -> Vec<f64> {
        (0..a.len())
            .map(|d| (a[d] - 0.5 * (self.lo[d] + self.hi[d])) / (0.5 * (self.hi[d] - self.lo[d])))
            .collect()
    }

    /// Takes one environment step (and one update when due); returns the
    /// action sent to the environment.
    pub fn step(&mut self) -> Vec<f64> {
        let a: Vec<f64> = if self.t < self.h.random_steps {
            (0..self.lo.len()).map(|d| self.act_rng.random_range(self.lo[d]..self.hi[d])).collect()
        } else {
            let u = self.policy(&self.actor, &self.norm(&self.state));
            let _branch: f64 = self.act_rng.random();
            let mut a = self.to_env(&u);
            for d in 0..a.len() {
                let e: f64 = self.act_rng.sample(StandardNormal);
                a[d] = (a[d] + self.h.noise * e).clamp(self.lo[d], self.hi[d]);
            }
            a
        };
        let r = self.env.step(&a);
        self.buf.push(Tr {
            s: std::mem::take(&mut self.state),
            a: a.clone(),
            r: r.reward,
            s2: r.next_state.clone(),
            done: r.done,
        });
        self.t += 1;
        if self.t == self.h.random_steps {
            self.fit();
        }
        if self.t > self.h.random_steps {
            self.update();
        }
        self.state = if r.done || r.truncated { self.env.reset() } else { r.next_state };
        a
    }

    fn fit(&mut self) {
        let n = self.buf.len() as f64;
        let d = self.buf[0].s.len();
        self.mean = (0..d).map(|k| self.buf.iter().map(|t| t.s[k]).sum::<f64>() / n).collect();
        self.std = (0..d)
            .map(|k| {
                let m = self.mean[k];
                let var = self.buf.iter().map(|t| (t.s[k] - m).powi(2)).sum::<f64>() / n;
                var.sqrt().max(1e-6)
            })
            .collect();
    }

    fn update(&mut self) {
        let n = self.buf.len();
        let idx: Vec<usize> = (0..self.h.batch).map(|_| self.rep_rng.random_range(0..n)).collect();
        let bsz = idx.len() as f64;
        let mut gc = vec![0.0; self.critic.p.len()];
        let mut ga = vec![0.0; self.actor.p.len()];
        for &i in &idx {
            let tr = &self.buf[i];
            let sn = self.norm(&tr.s);
            let sn2 = self.norm(&tr.s2);
            let u2 = self.policy(&self.actor_t, &sn2);
            let mut x2 = sn2.clone();
            x2.extend(&u2);
            let y = tr.r + self.h.gamma * if tr.done { 0.0 } else { 1.0 } * self.critic_t.out(&x2)[0];
            let mut x = sn.clone();
            x.extend(self.to_unit(&tr.a));
            let acts = self.critic.forward(&x);
            let delta = y - acts.last().unwrap()[0];
            // Median quantile: the asymmetric weight is 0.5 on both sides.
            let w = 0.5;
            let hg = if delta.abs() <= self.h.kappa { delta } else { self.h.kappa * delta.signum() };
            self.critic.backward(&acts, &[-w * hg / bsz], &mut gc);

            let aacts = self.actor.forward(&sn);
            let u: Vec<f64> = aacts.last().unwrap().iter().map(|z| z.tanh()).collect();
            let mut xa = sn.clone();
            xa.extend(&u);
            let cacts = self.critic.forward(&xa);
            let mut scratch = vec![0.0; self.critic.p.len()];
            let dx = self.critic.backward(&cacts, &[-1.0 / bsz], &mut scratch);
            let ds = sn.len();
            let dz: Vec<f64> = (0..u.len()).map(|d| dx[ds + d] * (1.0 - u[d] * u[d])).collect();
            self.actor.backward(&aacts, &dz, &mut ga);
        }
        self.opt_c.apply(&mut self.critic.p, &gc);
        self.opt_a.apply(&mut self.actor.p, &ga);
        let k = self.h.polyak;
        for (t, w) in self.actor_t.p.iter_mut().zip(&self.actor.p) {
            *t = k * *t + (1.0 - k) * w;
        }
        for (t, w) in self.critic_t.p.iter_mut().zip(&self.critic.p) {
            *t = k * *t + (1.0 - k) * w;
        }
    }
}
