//! Evaluation rollouts and the tracking-quality metrics computed from them.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, TrackingEnv, WorldState};
use crate::error::{contract, Result};
use crate::learner::{greedy_action, PlanProvider};
use crate::nn::Mlp;

/// Width of the tracking band in world-scale units.
pub const ACCURACY_BAND: f64 = 0.005;

/// `| d − d_be | / world_scale ≤ band`.
pub fn within_band(d: f64, d_be: f64, world_scale: f64, band: f64) -> bool {
    (d - d_be).abs() / world_scale <= band
}

/// How alike the simultaneous actions of one formation are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consistency {
    AllDifferent,
    /// Some but not all members repeat an action.
    TwoAlike,
    AllAlike,
}

/// `None` for formations with fewer than two members.
pub fn classify(actions: &[Action]) -> Option<Consistency> {
    if actions.len() < 2 {
        return None;
    }
    let mut distinct: Vec<usize> = actions.iter().map(|a| a.index()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    Some(if distinct.len() == actions.len() {
        Consistency::AllDifferent
    } else if distinct.len() == 1 {
        Consistency::AllAlike
    } else {
        Consistency::TwoAlike
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyFractions {
    pub all_different: f64,
    pub two_alike: f64,
    pub all_alike: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyCounts {
    pub all_different: u64,
    pub two_alike: u64,
    pub all_alike: u64,
}

impl ConsistencyCounts {
    pub fn add(&mut self, c: Consistency) {
        match c {
            Consistency::AllDifferent => self.all_different += 1,
            Consistency::TwoAlike => self.two_alike += 1,
            Consistency::AllAlike => self.all_alike += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.all_different + self.two_alike + self.all_alike
    }

    pub fn fractions(&self) -> Option<ConsistencyFractions> {
        let t = self.total();
        (t > 0).then(|| {
            let t = t as f64;
            ConsistencyFractions {
                all_different: self.all_different as f64 / t,
                two_alike: self.two_alike as f64 / t,
                all_alike: self.all_alike as f64 / t,
            }
        })
    }
}

/// Equal-width histogram over `[0, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub upper: f64,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub samples: u64,
}

impl Histogram {
    /// `None` for an empty sample.
    pub fn from_samples(samples: &[f64], bins: usize) -> Option<Self> {
        if samples.is_empty() || bins == 0 {
            return None;
        }
        let max = samples.iter().copied().fold(0.0, f64::max);
        let upper = if max > 0.0 { max } else { 1.0 };
        let mut counts = vec![0u64; bins];
        for &s in samples {
            let k = ((s / upper) * bins as f64) as usize;
            counts[k.min(bins - 1)] += 1;
        }
        Some(Self {
            upper,
            counts,
            mean: samples.iter().sum::<f64>() / samples.len() as f64,
            samples: samples.len() as u64,
        })
    }

    pub fn bin_centres(&self) -> Vec<f64> {
        let w = self.upper / self.counts.len() as f64;
        (0..self.counts.len()).map(|k| (k as f64 + 0.5) * w).collect()
    }
}

/// Everything reported about a batch of evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean reward per training episode, when a training log is available.
    pub convergence: Vec<f64>,
    /// Vehicle-to-tracked-target distance divided by the world scale.
    pub distance_histogram: Option<Histogram>,
    /// `‖v_auv − v_target‖` divided by the target speed cap.
    pub velocity_difference_histogram: Option<Histogram>,
    pub consistency_counts: ConsistencyCounts,
    /// `None` when no formation had two or more members.
    pub consistency: Option<ConsistencyFractions>,
    /// Mean cumulative energy spent per vehicle after each step.
    pub energy_curve: Vec<f64>,
    /// Mean remaining battery per vehicle after each step.
    pub battery_curve: Vec<f64>,
    pub accuracy: f64,
    pub mean_reward: f64,
    pub episodes: usize,
    pub steps: usize,
}

/// Per-entity kinematic record of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub episode: usize,
    pub step: usize,
    /// `"auv"` or `"target"`.
    pub entity: String,
    pub index: usize,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// Vehicles only.
    pub battery: Option<f64>,
}

pub fn entity_records(world: &WorldState, episode: usize) -> Vec<EntityRecord> {
    let v3 = |v: &crate::Vec3| [v.x, v.y, v.z];
    let auvs = world.auvs.iter().enumerate().map(|(i, a)| EntityRecord {
        episode,
        step: world.step_index,
        entity: "auv".into(),
        index: i,
        position: v3(&a.position),
        velocity: v3(&a.velocity),
        battery: Some(a.battery),
    });
    let targets = world.targets.iter().enumerate().map(|(j, t)| EntityRecord {
        episode,
        step: world.step_index,
        entity: "target".into(),
        index: j,
        position: v3(&t.position),
        velocity: v3(&t.velocity),
        battery: None,
    });
    auvs.chain(targets).collect()
}

/// Joint action chooser used during evaluation.
pub trait Policy {
    fn act(&mut self, world: &WorldState, features: &[Vec<f64>]) -> Result<Vec<Action>>;
    /// Called at every episode start with that episode's seed.
    fn reseed(&mut self, _seed: u64) {}
}

/// Argmax over each vehicle's actor logits.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    pub actors: Vec<Mlp>,
}

impl Policy for GreedyPolicy {
    fn act(&mut self, _world: &WorldState, features: &[Vec<f64>]) -> Result<Vec<Action>> {
        if features.len() != self.actors.len() {
            return Err(contract("policy and fleet sizes differ"));
        }
        self.actors.iter().zip(features).map(|(a, f)| greedy_action(a, f)).collect()
    }
}

/// Uniformly random actions.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, world: &WorldState, _features: &[Vec<f64>]) -> Result<Vec<Action>> {
        Ok((0..world.auvs.len())
            .map(|_| Action::ALL[self.rng.random_range(0..Action::COUNT)])
            .collect())
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA11_5EED);
    }
}

/// Every vehicle holds still.
#[derive(Debug, Clone, Copy)]
pub struct StayPolicy;

impl Policy for StayPolicy {
    fn act(&mut self, world: &WorldState, _features: &[Vec<f64>]) -> Result<Vec<Action>> {
        Ok(vec![Action::Stay; world.auvs.len()])
    }
}

/// Evaluation output: the report and, when requested, kinematic records.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub trajectory: Vec<EntityRecord>,
}

/// Histogram bin count used for the distance and velocity distributions.
pub const HISTOGRAM_BINS: usize = 40;

/// Rolls out one episode per seed. Episode `k` resets the environment from
/// `seeds[k]`, so two policies evaluated on the same seeds start from the
/// same worlds.
pub fn evaluate<P: Policy + ?Sized, Q: PlanProvider + ?Sized>(
    env: &TrackingEnv,
    policy: &mut P,
    planner: &mut Q,
    seeds: &[u64],
    record_trajectory: bool,
) -> Result<Evaluation> {
    let cfg = env.config();
    let (d_be, scale) = (cfg.reward.d_be_track, cfg.physics.world_scale);
    let speed_scale = cfg.physics.target_max_speed.max(f64::EPSILON);
    let len = cfg.scenario.episode_length;
    let n = env.n_auvs();
    let mut distances = Vec::new();
    let mut vdiffs = Vec::new();
    let mut counts = ConsistencyCounts::default();
    let mut energy_curve = vec![0.0; len];
    let mut battery_curve = vec![0.0; len];
    let mut trajectory = Vec::new();
    let (mut in_band, mut reward_sum, mut steps) = (0usize, 0.0, 0usize);

    for (k, &seed) in seeds.iter().enumerate() {
        policy.reseed(seed);
        let mut world = env.reset_seeded(seed);
        world.set_formations(&planner.plan(&world)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x57E9_0000);
        let (_, mut features) = env.observe(&world);
        let mut spent = 0.0;
        while !env.episode_done(&world) {
            let actions = policy.act(&world, &features)?;
            let (next, out) = env.step(&world, &actions, &mut rng)?;
            let t = world.step_index;
            for (&d, &dv) in out.info.distances.iter().zip(&out.info.velocity_differences) {
                in_band += usize::from(within_band(d, d_be, scale, ACCURACY_BAND));
                distances.push(d / scale);
                vdiffs.push(dv / speed_scale);
            }
            reward_sum += out.rewards.iter().sum::<f64>();
            for members in formations(&next, env.n_targets()) {
                let acts: Vec<Action> = members.iter().map(|&i| actions[i]).collect();
                if let Some(c) = classify(&acts) {
                    counts.add(c);
                }
            }
            spent += out.info.energy_spent.iter().sum::<f64>();
            energy_curve[t] += spent / n as f64;
            battery_curve[t] += next.auvs.iter().map(|a| a.battery).sum::<f64>() / n as f64;
            if record_trajectory {
                trajectory.extend(entity_records(&next, k));
            }
            features = out.features;
            world = next;
            steps += 1;
        }
    }
    let episodes = seeds.len();
    if episodes > 0 {
        for v in energy_curve.iter_mut().chain(battery_curve.iter_mut()) {
            *v /= episodes as f64;
        }
    }
    let samples = (steps * n).max(1) as f64;
    Ok(Evaluation {
        report: MetricsReport {
            convergence: Vec::new(),
            distance_histogram: Histogram::from_samples(&distances, HISTOGRAM_BINS),
            velocity_difference_histogram: Histogram::from_samples(&vdiffs, HISTOGRAM_BINS),
            consistency_counts: counts,
            consistency: counts.fractions(),
            energy_curve: if episodes > 0 { energy_curve } else { Vec::new() },
            battery_curve: if episodes > 0 { battery_curve } else { Vec::new() },
            accuracy: in_band as f64 / samples,
            mean_reward: reward_sum / samples,
            episodes,
            steps,
        },
        trajectory,
    })
}

/// Members of each target's formation, from the vehicles' current tracked target.
pub fn formations(world: &WorldState, n_targets: usize) -> Vec<Vec<usize>> {
    let mut f = vec![Vec::new(); n_targets];
    for i in 0..world.auvs.len() {
        f[world.tracked_target(i)].push(i);
    }
    f
}
