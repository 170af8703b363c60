//! Bounded transition storage with uniform or prioritized sampling, and the
//! state/reward normalizer fitted from the initial random-action data.

mod normalizer;
mod sum_tree;

pub use normalizer::{Normalizer, RewardScaling, STD_FLOOR};
pub use sum_tree::SumTree;

use rand::Rng;

use crate::error::{Error, Result};

/// One environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True terminal. Time-limit truncation is stored as `false`.
    pub done: bool,
}

/// Prioritized replay parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prioritization {
    /// Priority exponent.
    pub alpha: f64,
    /// Added to every `|td|` so no transition becomes unsampleable.
    pub eps: f64,
}

impl Default for Prioritization {
    fn default() -> Self {
        Self { alpha: 0.6, eps: 1e-3 }
    }
}

#[derive(Debug, Clone)]
struct PriorityState {
    params: Prioritization,
    tree: SumTree,
    max_priority: f64,
}

/// Identifies a sampled slot; stale once the slot has been overwritten.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleKey {
    slot: usize,
    seq: u64,
}

impl SampleKey {
    pub fn seq(&self) -> u64 {
        self.seq
    }
}

/// A sampled minibatch.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub transitions: Vec<&'a Transition>,
    pub keys: Vec<SampleKey>,
    /// Importance weights, max-normalized over the batch. `None` in uniform mode.
    pub weights: Option<Vec<f64>>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// FIFO replay buffer.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    seqs: Vec<u64>,
    next_slot: usize,
    next_seq: u64,
    priority: Option<PriorityState>,
    is_exponent: f64,
}

impl ReplayBuffer {
    pub fn uniform(capacity: usize) -> Result<Self> {
        Self::new(capacity, None)
    }

    pub fn prioritized(capacity: usize, params: Prioritization) -> Result<Self> {
        if !(params.alpha >= 0.0) || !(params.eps > 0.0) {
            return Err(Error::config("replay: alpha must be >= 0 and priority eps > 0"));
        }
        Self::new(capacity, Some(params))
    }

    fn new(capacity: usize, params: Option<Prioritization>) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            storage: Vec::new(),
            seqs: Vec::new(),
            next_slot: 0,
            next_seq: 0,
            priority: params.map(|params| PriorityState {
                params,
                tree: SumTree::new(capacity),
                max_priority: 1.0,
            }),
            is_exponent: 0.4,
        })
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_prioritized(&self) -> bool {
        self.priority.is_some()
    }

    /// Exponent applied to importance weights in prioritized mode.
    pub fn set_importance_exponent(&mut self, beta: f64) {
        self.is_exponent = beta;
    }

    pub fn importance_exponent(&self) -> f64 {
        self.is_exponent
    }

    /// Stores `t`, evicting the oldest transition when full. New transitions
    /// get the largest priority seen so far.
    pub fn push(&mut self, t: Transition) {
        let slot = self.next_slot;
        if self.storage.len() < self.capacity {
            self.storage.push(t);
            self.seqs.push(self.next_seq);
        } else {
            self.storage[slot] = t;
            self.seqs[slot] = self.next_seq;
        }
        self.next_seq += 1;
        self.next_slot = (slot + 1) % self.capacity;
        if let Some(p) = &mut self.priority {
            p.tree.set(slot, p.max_priority.powf(p.params.alpha));
        }
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> + Clone + '_ {
        let split = if self.storage.len() < self.capacity { 0 } else { self.next_slot };
        self.storage[split..].iter().chain(self.storage[..split].iter())
    }

    /// Insertion sequence numbers, oldest first.
    pub fn sequence_numbers(&self) -> Vec<u64> {
        let split = if self.storage.len() < self.capacity { 0 } else { self.next_slot };
        self.seqs[split..].iter().chain(&self.seqs[..split]).copied().collect()
    }

    /// Sampling probability of the transition at `slot` under the current priorities.
    pub fn probability(&self, slot: usize) -> f64 {
        match &self.priority {
            None => 1.0 / self.len() as f64,
            Some(p) => p.tree.get(slot) / p.tree.total(),
        }
    }

    pub fn priority(&self, key: SampleKey) -> Option<f64> {
        let p = self.priority.as_ref()?;
        (self.seqs.get(key.slot) == Some(&key.seq)).then(|| p.tree.get(key.slot).powf(1.0 / p.params.alpha))
    }

    /// Draws `batch_size` transitions with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch<'_>> {
        if self.storage.is_empty() {
            return Err(Error::usage("cannot sample from an empty replay buffer"));
        }
        let n = self.storage.len();
        let slots: Vec<usize> = match &self.priority {
            None => (0..batch_size).map(|_| rng.random_range(0..n)).collect(),
            Some(p) => {
                let total = p.tree.total();
                (0..batch_size)
                    .map(|_| p.tree.find(rng.random::<f64>() * total).min(n - 1))
                    .collect()
            }
        };
        let weights = self.priority.as_ref().map(|p| {
            let total = p.tree.total();
            let raw: Vec<f64> = slots
                .iter()
                .map(|&s| (n as f64 * p.tree.get(s) / total).powf(-self.is_exponent))
                .collect();
            let max = raw.iter().cloned().fold(f64::MIN, f64::max);
            raw.into_iter().map(|w| w / max).collect()
        });
        Ok(Batch {
            transitions: slots.iter().map(|&s| &self.storage[s]).collect(),
            keys: slots.iter().map(|&s| SampleKey { slot: s, seq: self.seqs[s] }).collect(),
            weights,
        })
    }

    /// Sets priority `|td| + eps` for every key still present. A no-op in
    /// uniform mode.
    pub fn update_priorities(&mut self, keys: &[SampleKey], td: &[f64]) -> Result<()> {
        if keys.len() != td.len() {
            return Err(Error::usage("one td error per sampled key required"));
        }
        let Some(p) = &mut self.priority else { return Ok(()) };
        for (k, &d) in keys.iter().zip(td) {
            if self.seqs.get(k.slot) != Some(&k.seq) {
                continue;
            }
            let pr = d.abs() + p.params.eps;
            p.max_priority = p.max_priority.max(pr);
            p.tree.set(k.slot, pr.powf(p.params.alpha));
        }
        Ok(())
    }
}
