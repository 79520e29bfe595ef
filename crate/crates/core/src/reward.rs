//! Per-vehicle reward: tracking, collision avoidance, current stability and
//! velocity matching terms, plus the heading-alignment shaping bonus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Weights and set-points of the reward terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    /// Outer weight of the tracking term.
    pub w_track: f64,
    /// Outer weight of the collision-avoidance term.
    pub w_collide: f64,
    /// Outer weight of the current-stability term.
    pub w_current: f64,
    /// Outer weight of the velocity-matching term.
    pub w_velocity: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
    pub omega4: f64,
    /// Preferred vehicle-to-target distance, m.
    pub d_be_track: f64,
    /// Preferred vehicle-to-vehicle distance, m.
    pub d_be_separation: f64,
    /// Floor for the speed denominators and the shaping degeneracy test.
    pub epsilon_guard: f64,
    /// Upper bound on the speed ratios of the current-stability and
    /// velocity-matching terms.
    pub ratio_cap: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_track: 1.0,
            w_collide: 1.0,
            w_current: 1.0,
            w_velocity: 1.0,
            omega1: 1.0,
            omega2: 0.5,
            omega3: 0.25,
            omega4: 0.25,
            d_be_track: 80.0,
            d_be_separation: 80.0,
            epsilon_guard: 1e-8,
            ratio_cap: 10.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_be_track > 0.0) || !(self.d_be_separation > 0.0) {
            return Err(Error::Config(
                "reward set-points d_be_track and d_be_separation must be > 0".into(),
            ));
        }
        if !(self.epsilon_guard > 0.0) {
            return Err(Error::Config("reward epsilon_guard must be > 0".into()));
        }
        if !(self.ratio_cap > 0.0) {
            return Err(Error::Config("reward ratio_cap must be > 0".into()));
        }
        Ok(())
    }
}

/// The five reward ingredients before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub tracking: f64,
    pub collision: f64,
    pub current_stability: f64,
    pub velocity_match: f64,
    pub shaping: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub tracking: f64,
    pub collision: f64,
    pub current_stability: f64,
    pub velocity_match: f64,
    pub shaping: f64,
    pub total: f64,
    pub shaped_total: f64,
}

pub fn tracking_reward(d: f64, w: &RewardWeights) -> f64 {
    -w.omega1 * (d - w.d_be_track).abs() / w.d_be_track
}

pub fn collision_reward(distances_to_peers: &[f64], w: &RewardWeights) -> f64 {
    let sum: f64 = distances_to_peers
        .iter()
        .map(|d| (d - w.d_be_separation).abs() / w.d_be_separation)
        .sum();
    -w.omega2 * sum
}

fn guarded_ratio(num: &Vec3, den: &Vec3, w: &RewardWeights) -> f64 {
    ((num.norm()) / den.norm().max(w.epsilon_guard)).min(w.ratio_cap)
}

pub fn current_stability_reward(v_cur: &Vec3, v_pre: &Vec3, w: &RewardWeights) -> f64 {
    -w.omega3 * guarded_ratio(&(v_cur - v_pre), v_pre, w)
}

pub fn velocity_matching_reward(v_agent: &Vec3, v_target: &Vec3, w: &RewardWeights) -> f64 {
    -w.omega4 * guarded_ratio(&(v_agent - v_target), v_target, w)
}

/// Cosine between the agent's velocity and its bearing to the target.
pub fn shaping_term(p_target: &Vec3, p_agent: &Vec3, v_agent: &Vec3, epsilon_guard: f64) -> f64 {
    let bearing = p_target - p_agent;
    let (nb, nv) = (bearing.norm(), v_agent.norm());
    if nb < epsilon_guard || nv < epsilon_guard {
        return 0.0;
    }
    (bearing.dot(v_agent) / (nb * nv)).clamp(-1.0, 1.0)
}

pub fn total_reward(c: &RewardComponents, w: &RewardWeights, with_shaping: bool) -> RewardBreakdown {
    let total = w.w_track * c.tracking
        + w.w_collide * c.collision
        + w.w_current * c.current_stability
        + w.w_velocity * c.velocity_match;
    RewardBreakdown {
        tracking: c.tracking,
        collision: c.collision,
        current_stability: c.current_stability,
        velocity_match: c.velocity_match,
        shaping: c.shaping,
        total,
        shaped_total: if with_shaping { total + c.shaping } else { total },
    }
}
