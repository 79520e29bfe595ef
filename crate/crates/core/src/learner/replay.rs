//! Experience storage and the top-half resampling rule.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// One joint transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub observations: Vec<Vec<f64>>,
    /// One-hot action of each agent.
    pub actions: Vec<[f64; 7]>,
    pub rewards: Vec<f64>,
    pub next_observations: Vec<Vec<f64>>,
    /// Episode that produced the transition.
    pub round_index: usize,
}

impl Experience {
    pub fn n_agents(&self) -> usize {
        self.rewards.len()
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len().max(1) as f64
    }

    pub fn check(&self) -> Result<()> {
        let n = self.rewards.len();
        if n == 0
            || self.observations.len() != n
            || self.actions.len() != n
            || self.next_observations.len() != n
        {
            return Err(contract("experience lists disagree on fleet size"));
        }
        Ok(())
    }
}

/// Fixed-capacity ring with FIFO eviction.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Experience>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(contract("replay capacity must be positive"));
        }
        Ok(Self {
            items: Vec::new(),
            capacity,
            next: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, e: Experience) -> Result<()> {
        e.check()?;
        if let Some(first) = self.items.first() {
            if first.n_agents() != e.n_agents() {
                return Err(contract("experience fleet size differs from buffer contents"));
            }
        }
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// Storage slot `i` (not insertion order once the ring has wrapped).
    pub fn get(&self, i: usize) -> &Experience {
        &self.items[i]
    }

    /// Oldest-first iteration.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Experience> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }
}

/// Index sets of one resampling draw, as storage slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resampled {
    pub d1: Vec<usize>,
    /// The `⌈n/2⌉` members of `d1` with the highest mean reward, best first.
    pub d2: Vec<usize>,
}

/// Draws `n` distinct transitions and their top half by mean reward.
///
/// Returns `None` while the buffer holds fewer than `min_size` transitions
/// or fewer than `n`.
pub fn resample<R: Rng + ?Sized>(buffer: &ReplayBuffer, n: usize, min_size: usize, rng: &mut R) -> Option<Resampled> {
    if n == 0 || buffer.len() < min_size.max(n) {
        return None;
    }
    let d1: Vec<usize> = sample(rng, buffer.len(), n).into_vec();
    let d2 = top_half(&d1, |i| buffer.get(i).mean_reward());
    Some(Resampled { d1, d2 })
}

/// The `⌈n/2⌉` entries of `items` with the highest `reward`, stable on ties.
pub fn top_half<F: Fn(usize) -> f64>(items: &[usize], reward: F) -> Vec<usize> {
    let mut ranked: Vec<(usize, f64)> = items.iter().map(|&i| (i, reward(i))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(items.len().div_ceil(2));
    ranked.into_iter().map(|(i, _)| i).collect()
}
