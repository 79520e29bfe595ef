//! Dynamic-switching multi-agent actor–critic learner.
//!
//! Each agent owns an actor over its local features and a centralized critic
//! whose input concatenates a few agents' (observation, action) pairs and
//! adds a reward-weighted feature sum over the rest of the fleet. Every
//! update draws a batch, fits the critics, refits them on the
//! higher-reward half of that batch, then takes one relaxed policy-gradient
//! step per actor.

pub mod agent;
pub mod attention;
pub mod checkpoint;
pub mod replay;
pub mod train;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use agent::{
    actor_objective, actor_update, critic_input, critic_targets, critic_update, critic_value, greedy_action,
    gumbel_noise, softmax, target_variance, AgentBundle, CriticLayout, UpdateContext,
};
pub use attention::{
    all_agents, attention_weights, build_selection, concatenated_slots, proportional_weights, select_best,
    AttentionSelection,
};
pub use replay::{resample, top_half, Experience, ReplayBuffer, Resampled};
pub use train::{train, AsmaPlanner, EpisodeLog, PlanProvider};

use crate::env::Action;
use crate::error::{Error, Result};

/// Learner hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub episodes: usize,
    pub hidden: usize,
    pub feature_width: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub tau: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub min_buffer: usize,
    /// Environment steps between parameter updates.
    pub update_interval: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of the episodes over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    /// Temperature of the relaxed action sample in the actor update.
    pub gumbel_temperature: f64,
    /// Weight of the mean squared actor logit subtracted from the actor
    /// objective; keeps the logits from saturating.
    pub logit_penalty: f64,
    /// Softmax temperature applied to per-step round rewards.
    pub attention_temperature: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            episodes: 5000,
            hidden: 64,
            feature_width: 64,
            learning_rate: 3e-3,
            gamma: 0.95,
            tau: 1e-2,
            buffer_capacity: 100_000,
            batch_size: 512,
            min_buffer: 4000,
            update_interval: 2000,
            epsilon_start: 0.3,
            epsilon_end: 0.01,
            epsilon_decay_fraction: 0.3,
            gumbel_temperature: 1.0,
            logit_penalty: 1e-3,
            attention_temperature: 1.0,
            grad_clip: None,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.hidden == 0 || self.feature_width == 0 {
            return bad("learner hidden and feature_width must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learner learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("learner gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("learner tau must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.update_interval == 0 {
            return bad("learner batch_size and update_interval must be positive");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("learner buffer_capacity must hold at least one batch");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("learner epsilon values must lie in [0, 1]");
        }
        if !(self.gumbel_temperature > 0.0) || !(self.attention_temperature > 0.0) {
            return bad("learner temperatures must be > 0");
        }
        if !(self.logit_penalty >= 0.0) {
            return bad("learner logit_penalty must be >= 0");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("learner grad_clip must be > 0 when set");
        }
        Ok(())
    }

    /// Exploration rate for a 0-based episode index.
    pub fn epsilon(&self, episode: usize) -> f64 {
        let span = (self.epsilon_decay_fraction * self.episodes as f64).round().max(1.0);
        let frac = (episode as f64 / span).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Components switched off for ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Train on the unshaped reward.
    pub no_reshaping: bool,
    /// Concatenate every agent in the critic and drop the weighted features.
    pub no_attention: bool,
    /// Skip the second critic fit on the top half of each batch.
    pub no_resampling: bool,
}

impl Ablations {
    pub fn label(&self) -> &'static str {
        match (self.no_reshaping, self.no_attention, self.no_resampling) {
            (false, false, false) => "full",
            (true, false, false) => "no-reshaping",
            (false, true, false) => "no-attention",
            (false, false, true) => "no-resampling",
            _ => "custom",
        }
    }
}

/// Statistics of one parameter update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub resample_loss: Option<f64>,
    pub actor_grad_norms: Vec<f64>,
    /// Critic-target variance of the batch under the reward-ranked weights
    /// and under even weights over the same agents.
    pub target_variance: (f64, f64),
}

/// The learner state for a fixed fleet.
#[derive(Debug, Clone)]
pub struct Learner {
    pub config: LearnerConfig,
    pub ablations: Ablations,
    pub layout: CriticLayout,
    pub bundles: Vec<AgentBundle>,
    pub buffer: ReplayBuffer,
    /// Per-agent mean per-step reward of the last finished episode.
    pub round_rewards: Vec<f64>,
    pub updates: usize,
    rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(config: LearnerConfig, ablations: Ablations, n_agents: usize, obs_dim: usize) -> Result<Self> {
        config.validate()?;
        if n_agents == 0 || obs_dim == 0 {
            return Err(Error::Config("learner needs at least one agent and one feature".into()));
        }
        let layout = Self::layout_for(&config, ablations, n_agents, obs_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_1EA2_0000_0001);
        let bundles = (0..n_agents)
            .map(|_| AgentBundle::new(&layout, config.hidden, config.feature_width, config.learning_rate, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            round_rewards: vec![0.0; n_agents],
            updates: 0,
            config,
            ablations,
            layout,
            bundles,
            rng,
        })
    }

    pub fn layout_for(config: &LearnerConfig, ablations: Ablations, n_agents: usize, obs_dim: usize) -> CriticLayout {
        if ablations.no_attention {
            CriticLayout {
                obs_dim,
                slots: n_agents,
                feature_width: 0,
            }
        } else {
            CriticLayout {
                obs_dim,
                slots: concatenated_slots(n_agents),
                feature_width: config.feature_width,
            }
        }
    }

    pub fn n_agents(&self) -> usize {
        self.bundles.len()
    }

    /// ε-greedy joint action.
    pub fn act(&mut self, features: &[Vec<f64>], epsilon: f64) -> Result<Vec<Action>> {
        features
            .iter()
            .zip(&self.bundles)
            .map(|(f, b)| {
                if self.rng.random::<f64>() < epsilon {
                    Ok(Action::ALL[self.rng.random_range(0..Action::COUNT)])
                } else {
                    greedy_action(&b.actor, f)
                }
            })
            .collect()
    }

    /// Selections and weights for the next update, drawn from the learner RNG.
    pub fn update_context(&mut self) -> UpdateContext {
        let n = self.n_agents();
        let best = select_best(&self.round_rewards);
        let mut selections = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let sel = if self.ablations.no_attention {
                all_agents(i, best, n, false)
            } else {
                build_selection(i, best, n, &mut self.rng)
            };
            let r: Vec<f64> = sel.weighted.iter().map(|&k| self.round_rewards[k]).collect();
            weights.push(attention_weights(&r, self.config.attention_temperature));
            selections.push(sel);
        }
        UpdateContext { selections, weights }
    }

    /// One full update if the buffer is ready; `None` otherwise.
    pub fn update(&mut self) -> Result<Option<UpdateStats>> {
        let Some(draw) = resample(&self.buffer, self.config.batch_size, self.config.min_buffer, &mut self.rng) else {
            return Ok(None);
        };
        let ctx = self.update_context();
        let d1: Vec<&Experience> = draw.d1.iter().map(|&i| self.buffer.get(i)).collect();
        let g = self.config.gamma;
        let target_variance = (
            target_variance(&self.bundles, &self.layout, &d1, &ctx, g)?,
            target_variance(&self.bundles, &self.layout, &d1, &ctx.uniform(), g)?,
        );
        let critic_loss = critic_update(
            &mut self.bundles,
            &self.layout,
            &d1,
            &ctx,
            self.config.gamma,
            self.config.grad_clip,
        )?;
        let resample_loss = if self.ablations.no_resampling {
            None
        } else {
            let d2: Vec<&Experience> = draw.d2.iter().map(|&i| self.buffer.get(i)).collect();
            Some(critic_update(
                &mut self.bundles,
                &self.layout,
                &d2,
                &ctx,
                self.config.gamma,
                self.config.grad_clip,
            )?)
        };
        let actor_grad_norms = actor_update(
            &mut self.bundles,
            &self.layout,
            &d1,
            &ctx,
            self.config.gumbel_temperature,
            self.config.logit_penalty,
            self.config.grad_clip,
            &mut self.rng,
        )?;
        self.updates += 1;
        Ok(Some(UpdateStats {
            critic_loss,
            resample_loss,
            actor_grad_norms,
            target_variance,
        }))
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        self.bundles.iter_mut().try_for_each(|b| b.soft_update_targets(tau))
    }

    pub fn actors(&self) -> Vec<crate::nn::Mlp> {
        self.bundles.iter().map(|b| b.actor.clone()).collect()
    }
}
