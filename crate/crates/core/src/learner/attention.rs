//! Dynamic-switching attention: who the critic of each agent sees in full,
//! and how the rest of the fleet is weighted.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Critic-input partition of the fleet for one agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSelection {
    /// Highest-reward agent of the last round.
    pub best: usize,
    /// Agents whose (observation, action) pairs are concatenated, in slot
    /// order; slot 0 always holds the agent that owns the critic.
    pub concatenated: Vec<usize>,
    /// Agents summarized through the weighted feature sum, ascending.
    pub weighted: Vec<usize>,
    /// Fleet too small for the three-slot layout; everyone is concatenated.
    pub degenerate: bool,
}

/// Number of concatenated slots for a fleet of `n`.
pub fn concatenated_slots(n: usize) -> usize {
    if n < 3 {
        n
    } else {
        3
    }
}

/// Argmax with ties to the lowest index.
pub fn select_best(round_rewards: &[f64]) -> usize {
    let mut best = 0;
    for (i, &r) in round_rewards.iter().enumerate().skip(1) {
        if r > round_rewards[best] {
            best = i;
        }
    }
    best
}

pub fn build_selection<R: Rng + ?Sized>(self_index: usize, best: usize, fleet: usize, rng: &mut R) -> AttentionSelection {
    assert!(self_index < fleet && best < fleet, "agent index outside fleet");
    if fleet < 3 {
        return all_agents(self_index, best, fleet, true);
    }
    let mut concatenated = vec![self_index];
    if best != self_index {
        concatenated.push(best);
    }
    let pool: Vec<usize> = (0..fleet).filter(|k| !concatenated.contains(k)).collect();
    let draws = 3 - concatenated.len();
    concatenated.extend(sample(rng, pool.len(), draws).into_iter().map(|p| pool[p]));
    let weighted = (0..fleet).filter(|k| !concatenated.contains(k)).collect();
    AttentionSelection {
        best,
        concatenated,
        weighted,
        degenerate: false,
    }
}

/// Every agent concatenated, owner first, nothing weighted.
pub fn all_agents(self_index: usize, best: usize, fleet: usize, degenerate: bool) -> AttentionSelection {
    let concatenated = std::iter::once(self_index)
        .chain((0..fleet).filter(|&k| k != self_index))
        .collect();
    AttentionSelection {
        best,
        concatenated,
        weighted: Vec::new(),
        degenerate,
    }
}

/// Softmax of `rewards / temperature`, renormalized.
pub fn attention_weights(rewards: &[f64], temperature: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = rewards.iter().map(|r| ((r - max) / temperature).exp()).collect();
    proportional_weights(&e)
}

/// Each value's share of the total; inputs must be positive.
pub fn proportional_weights(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().sum();
    let mut w: Vec<f64> = values.iter().map(|v| v / total).collect();
    // One correction pass brings the sum within an ulp or two of 1.
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}
