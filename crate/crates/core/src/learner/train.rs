//! The episode loop.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Experience, Learner};
use crate::asma::{assign, score_matrix, AssignConfig, AuvProfile};
use crate::env::{TrackingEnv, WorldState};
use crate::error::{contract, Result};
use crate::metrics::{within_band, ACCURACY_BAND};

/// Supplies the vehicle-to-target assignment at the start of an episode.
pub trait PlanProvider {
    fn plan(&mut self, world: &WorldState) -> Result<Vec<usize>>;
}

impl<F: FnMut(&WorldState) -> Result<Vec<usize>>> PlanProvider for F {
    fn plan(&mut self, world: &WorldState) -> Result<Vec<usize>> {
        self(world)
    }
}

/// Fuzzy-score formation assignment over fixed vehicle profiles.
#[derive(Debug, Clone)]
pub struct AsmaPlanner {
    pub profiles: Vec<AuvProfile>,
    pub config: AssignConfig,
}

impl PlanProvider for AsmaPlanner {
    fn plan(&mut self, world: &WorldState) -> Result<Vec<usize>> {
        let m = score_matrix(&self.profiles, world)?;
        Ok(assign(&m, &self.config)?.plan.assignment)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    /// 1-based.
    pub episode: usize,
    /// Unshaped total reward per vehicle and step.
    pub mean_reward: f64,
    /// Shaped total reward per vehicle and step.
    pub mean_shaped_reward: f64,
    /// Per-vehicle mean training reward of the episode.
    pub agent_rewards: Vec<f64>,
    pub critic_loss: Option<f64>,
    pub resample_loss: Option<f64>,
    pub actor_grad_norm: Option<f64>,
    /// Mean critic-target variance over the episode's updates, ranked weights.
    pub target_variance_ranked: Option<f64>,
    /// The same under even weights.
    pub target_variance_uniform: Option<f64>,
    pub epsilon: f64,
    pub updates: usize,
    pub buffer_len: usize,
    /// Share of vehicle-steps inside the tracking band.
    pub accuracy: f64,
    pub mean_distance: f64,
    pub energy_spent: f64,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs `learner.config.episodes` episodes, passing each log line to `sink`
/// as soon as the episode ends.
pub fn train<P, S>(env: &TrackingEnv, learner: &mut Learner, planner: &mut P, mut sink: S) -> Result<Vec<EpisodeLog>>
where
    P: PlanProvider + ?Sized,
    S: FnMut(&EpisodeLog) -> Result<()>,
{
    env.config().validate()?;
    learner.config.validate()?;
    if learner.n_agents() != env.n_auvs() || learner.layout.obs_dim != env.feature_dim() {
        return Err(contract("learner was built for a different fleet or feature width"));
    }
    let cfg = learner.config.clone();
    let shaped = !learner.ablations.no_reshaping;
    let n = env.n_auvs();
    let len = env.config().scenario.episode_length;
    let d_be = env.config().reward.d_be_track;
    let scale = env.config().physics.world_scale;
    let mut env_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut steps = 0usize;
    let mut logs = Vec::with_capacity(cfg.episodes);

    for episode in 0..cfg.episodes {
        let epsilon = cfg.epsilon(episode);
        let mut world = env.reset(&mut env_rng);
        let plan = planner.plan(&world)?;
        world.set_formations(&plan)?;
        let (_, mut features) = env.observe(&world);

        let mut train_sum = vec![0.0; n];
        let (mut total_sum, mut shaped_sum) = (0.0, 0.0);
        let (mut in_band, mut dist_sum, mut energy) = (0usize, 0.0, 0.0);
        let (mut losses, mut d2_losses, mut norms) = (Vec::new(), Vec::new(), Vec::new());
        let (mut var_r, mut var_u) = (Vec::new(), Vec::new());

        while !env.episode_done(&world) {
            let actions = learner.act(&features, epsilon)?;
            let (next, out) = env.step(&world, &actions, &mut env_rng)?;
            let rewards = if shaped { out.shaped_rewards.clone() } else { out.rewards.clone() };
            for (s, r) in train_sum.iter_mut().zip(&rewards) {
                *s += r;
            }
            total_sum += out.rewards.iter().sum::<f64>();
            shaped_sum += out.shaped_rewards.iter().sum::<f64>();
            for &d in &out.info.distances {
                in_band += usize::from(within_band(d, d_be, scale, ACCURACY_BAND));
                dist_sum += d;
            }
            energy += out.info.energy_spent.iter().sum::<f64>();
            learner.buffer.push(Experience {
                observations: std::mem::replace(&mut features, out.features.clone()),
                actions: actions.iter().map(|a| a.one_hot()).collect(),
                rewards,
                next_observations: out.features,
                round_index: episode,
            })?;
            world = next;
            steps += 1;
            if steps % cfg.update_interval == 0 {
                if let Some(stats) = learner.update()? {
                    losses.push(stats.critic_loss);
                    d2_losses.extend(stats.resample_loss);
                    norms.push(stats.actor_grad_norms.iter().sum::<f64>() / n as f64);
                    var_r.push(stats.target_variance.0);
                    var_u.push(stats.target_variance.1);
                }
            }
        }
        learner.soft_update_targets()?;
        let denom = (len.max(1) * n) as f64;
        learner.round_rewards = train_sum.iter().map(|s| s / len.max(1) as f64).collect();
        let log = EpisodeLog {
            episode: episode + 1,
            mean_reward: total_sum / denom,
            mean_shaped_reward: shaped_sum / denom,
            agent_rewards: learner.round_rewards.clone(),
            critic_loss: mean(&losses),
            resample_loss: mean(&d2_losses),
            actor_grad_norm: mean(&norms),
            target_variance_ranked: mean(&var_r),
            target_variance_uniform: mean(&var_u),
            epsilon,
            updates: learner.updates,
            buffer_len: learner.buffer.len(),
            accuracy: in_band as f64 / denom,
            mean_distance: dist_sum / denom,
            energy_spent: energy,
        };
        sink(&log)?;
        logs.push(log);
    }
    Ok(logs)
}
