use rand::{Rng, RngCore};

use crate::agent::Batch;
use crate::diffcore::Tensor;

/// One environment transition `(s, a, r, s')`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
}

/// Fixed-capacity ring buffer; once full, each insertion replaces the oldest
/// transition.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Transition>,
    cursor: usize,
    inserted: u64,
}

impl ReplayBuffer {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            slots: Vec::with_capacity(capacity.min(1 << 20)),
            cursor: 0,
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total insertions over the buffer's lifetime.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) {
        if self.slots.len() < self.capacity {
            self.slots.push(t);
        } else {
            self.slots[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.inserted += 1;
    }

    /// Stored transitions from oldest to newest.
    pub fn iter_chronological(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.slots.len() < self.capacity { 0 } else { self.cursor };
        self.slots[split..].iter().chain(&self.slots[..split])
    }

    /// Storage slot indices drawn uniformly with replacement.
    pub fn sample_indices(&self, rng: &mut dyn RngCore, n: usize) -> Vec<usize> {
        assert!(!self.is_empty(), "cannot sample an empty replay buffer");
        (0..n).map(|_| rng.random_range(0..self.slots.len())).collect()
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.slots.get(slot)
    }

    /// A uniformly drawn minibatch of `n` transitions.
    pub fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Batch {
        let picks = self.sample_indices(rng, n);
        let first = &self.slots[picks[0]];
        let (od, ad) = (first.obs.len(), first.action.len());
        let mut obs = Vec::with_capacity(n * od);
        let mut actions = Vec::with_capacity(n * ad);
        let mut next_obs = Vec::with_capacity(n * od);
        let mut rewards = Vec::with_capacity(n);
        let mut terminal = Vec::with_capacity(n);
        for &i in &picks {
            let t = &self.slots[i];
            obs.extend_from_slice(&t.obs);
            actions.extend_from_slice(&t.action);
            next_obs.extend_from_slice(&t.next_obs);
            rewards.push(t.reward);
            terminal.push(t.terminal);
        }
        Batch::new(
            Tensor::matrix(n, od, obs).expect("uniform observation width"),
            Tensor::matrix(n, ad, actions).expect("uniform action width"),
            rewards,
            Tensor::matrix(n, od, next_obs).expect("uniform observation width"),
            terminal,
        )
        .expect("consistent batch")
    }
}
