//! The multi-vehicle tracking MDP: world state, discrete thrust actions,
//! point-mass dynamics under current forcing, target motion, energy
//! accounting and reward/observation generation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::ocean::{net_current_force, FlowField, FluidParams};
use crate::reward::{
    collision_reward, current_stability_reward, shaping_term, total_reward, tracking_reward,
    velocity_matching_reward, RewardBreakdown, RewardComponents, RewardWeights,
};
use crate::sonar::{sense, Observation, SonarParams};
use crate::Vec3;

/// Fleet composition and episode structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_auvs: usize,
    pub n_targets: usize,
    /// Whether the current field acts on the vehicles.
    pub current: bool,
    pub episode_length: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_auvs: 4,
            n_targets: 2,
            current: false,
            episode_length: 600,
        }
    }
}

/// Kinematic, energy and spawn constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsConfig {
    /// Integration step, s.
    pub dt: f64,
    /// Fraction of velocity removed every step.
    pub damping: f64,
    /// Length that maps metres onto the normalized units of the metrics.
    pub world_scale: f64,
    /// Radius of the shell vehicles spawn on, m.
    pub spawn_radius: f64,
    /// Thickness of the spawn shell, m (0 puts every vehicle exactly on the radius).
    pub spawn_shell_width: f64,
    /// Targets spawn uniformly inside a ball of this radius around the origin, m.
    pub target_spawn_radius: f64,
    /// Thrust magnitude of a move action, N.
    pub thrust: f64,
    pub mass: f64,
    /// Energy units consumed by one move action.
    pub move_cost: f64,
    pub initial_battery: f64,
    pub target_max_speed: f64,
    /// Mean-reversion rate of the target velocity walk, 1/s.
    pub target_ou_theta: f64,
    /// Velocity noise of the target walk, m/s/√s.
    pub target_ou_sigma: f64,
    /// Spawn vehicles in the horizontal plane of the targets instead of on a sphere.
    pub planar_spawn: bool,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            damping: 0.25,
            world_scale: 1000.0,
            spawn_radius: 1000.0,
            spawn_shell_width: 0.0,
            target_spawn_radius: 50.0,
            thrust: 50.0,
            mass: 50.0,
            move_cost: 1.0,
            initial_battery: 1000.0,
            target_max_speed: 0.5,
            target_ou_theta: 0.5,
            target_ou_sigma: 0.1,
            planar_spawn: false,
        }
    }
}

/// How a sonar observation is turned into the learner's input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationLayout {
    /// Append relative positions of detected contacts to the echo features.
    pub relative_positions: bool,
    /// m per feature unit for positions.
    pub position_scale: f64,
    /// m/s per feature unit for velocities.
    pub velocity_scale: f64,
    /// dB per feature unit for echoes.
    pub echo_scale: f64,
}

impl Default for ObservationLayout {
    fn default() -> Self {
        Self {
            relative_positions: true,
            position_scale: 100.0,
            velocity_scale: 1.0,
            echo_scale: 100.0,
        }
    }
}

/// Everything the environment needs to run an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EnvConfig {
    pub scenario: ScenarioConfig,
    pub physics: PhysicsConfig,
    pub fluid: FluidParams,
    pub flow: FlowField,
    pub sonar: SonarParams,
    pub reward: RewardWeights,
    pub observation: ObservationLayout,
    /// Add the shaping bonus to the reward the learner sees.
    pub with_shaping: bool,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        if s.n_auvs == 0 || s.n_targets == 0 {
            return Err(Error::Config("fleet and target counts must be positive".into()));
        }
        if s.n_auvs < s.n_targets {
            return Err(Error::Config(format!(
                "{} vehicles cannot cover {} targets",
                s.n_auvs, s.n_targets
            )));
        }
        if s.episode_length == 0 {
            return Err(Error::Config("episode_length must be positive".into()));
        }
        let p = &self.physics;
        if !(p.dt > 0.0) || !(0.0..=1.0).contains(&p.damping) {
            return Err(Error::Config("dt must be > 0 and damping in [0, 1]".into()));
        }
        if !(p.mass > 0.0) || !(p.thrust >= 0.0) || !(p.world_scale > 0.0) {
            return Err(Error::Config("mass and world_scale must be > 0, thrust >= 0".into()));
        }
        if !(p.move_cost >= 0.0) || !(p.initial_battery >= 0.0) || !(p.target_max_speed >= 0.0) {
            return Err(Error::Config("energy and target speed constants must be >= 0".into()));
        }
        let o = &self.observation;
        if !(o.position_scale > 0.0 && o.velocity_scale > 0.0 && o.echo_scale > 0.0) {
            return Err(Error::Config("observation scales must be > 0".into()));
        }
        self.fluid.validate()?;
        self.flow.validate()?;
        self.sonar.validate()?;
        self.reward.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuvState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub battery: f64,
    pub mass: f64,
    /// Index of the target this vehicle's formation tracks.
    pub formation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub max_speed: f64,
    /// Drift the velocity walk reverts to.
    pub mean_velocity: Vec3,
}

/// Global state of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub auvs: Vec<AuvState>,
    pub targets: Vec<TargetState>,
    pub time: f64,
    pub step_index: usize,
}

impl WorldState {
    /// Target a vehicle is scored against: its formation's target, or the
    /// nearest one while unassigned.
    pub fn tracked_target(&self, auv: usize) -> usize {
        if let Some(j) = self.auvs[auv].formation {
            return j;
        }
        let p = self.auvs[auv].position;
        (0..self.targets.len())
            .min_by(|&a, &b| {
                let da = (self.targets[a].position - p).norm();
                let db = (self.targets[b].position - p).norm();
                da.total_cmp(&db)
            })
            .expect("world has at least one target")
    }

    pub fn distance(&self, auv: usize, target: usize) -> f64 {
        (self.targets[target].position - self.auvs[auv].position).norm()
    }

    pub fn set_formations(&mut self, assignment: &[usize]) -> Result<()> {
        if assignment.len() != self.auvs.len() {
            return Err(contract("assignment length must equal fleet size"));
        }
        for (auv, &t) in self.auvs.iter_mut().zip(assignment) {
            if t >= self.targets.len() {
                return Err(contract(format!("target index {t} out of range")));
            }
            auv.formation = Some(t);
        }
        Ok(())
    }
}

/// The seven discrete actions of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    PlusX,
    MinusX,
    PlusY,
    MinusY,
    PlusZ,
    MinusZ,
    Stay,
}

impl Action {
    pub const COUNT: usize = 7;
    pub const ALL: [Action; 7] = [
        Action::PlusX,
        Action::MinusX,
        Action::PlusY,
        Action::MinusY,
        Action::PlusZ,
        Action::MinusZ,
        Action::Stay,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> [f64; 7] {
        let mut v = [0.0; 7];
        v[self.index()] = 1.0;
        v
    }

    pub fn is_stay(self) -> bool {
        self == Action::Stay
    }
}

pub fn action_to_thrust(a: Action, thrust_magnitude: f64) -> Vec3 {
    let m = thrust_magnitude;
    match a {
        Action::PlusX => Vec3::new(m, 0.0, 0.0),
        Action::MinusX => Vec3::new(-m, 0.0, 0.0),
        Action::PlusY => Vec3::new(0.0, m, 0.0),
        Action::MinusY => Vec3::new(0.0, -m, 0.0),
        Action::PlusZ => Vec3::new(0.0, 0.0, m),
        Action::MinusZ => Vec3::new(0.0, 0.0, -m),
        Action::Stay => Vec3::zeros(),
    }
}

/// Per-step measurements used by the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Distance of each vehicle to its tracked target, m.
    pub distances: Vec<f64>,
    /// Speed difference ‖v_auv − v_target‖ to the tracked target, m/s.
    pub velocity_differences: Vec<f64>,
    pub energy_spent: Vec<f64>,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observations: Vec<Observation>,
    /// Learner input vectors derived from `observations`.
    pub features: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub shaped_rewards: Vec<f64>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub done: bool,
    pub info: StepInfo,
}

/// Stateless environment: all episode state lives in [`WorldState`].
#[derive(Debug, Clone)]
pub struct TrackingEnv {
    cfg: EnvConfig,
}

impl TrackingEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn n_auvs(&self) -> usize {
        self.cfg.scenario.n_auvs
    }

    pub fn n_targets(&self) -> usize {
        self.cfg.scenario.n_targets
    }

    /// Length of the learner feature vector.
    pub fn feature_dim(&self) -> usize {
        let (na, nt) = (self.n_auvs(), self.n_targets());
        let base = 6 + nt + (na - 1);
        if self.cfg.observation.relative_positions {
            base + 3 * (nt + na - 1)
        } else {
            base
        }
    }

    /// Fresh episode from a seed.
    pub fn reset_seeded(&self, seed: u64) -> WorldState {
        self.reset(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> WorldState {
        let p = &self.cfg.physics;
        let targets = (0..self.n_targets())
            .map(|_| {
                let position = sample_in_ball(rng, p.target_spawn_radius, false);
                let heading = sample_unit(rng, p.planar_spawn);
                let mean_velocity = heading * (0.5 * p.target_max_speed);
                TargetState {
                    position,
                    velocity: mean_velocity,
                    max_speed: p.target_max_speed,
                    mean_velocity,
                }
            })
            .collect();
        let auvs = (0..self.n_auvs())
            .map(|_| {
                let r = p.spawn_radius + p.spawn_shell_width * (rng.random::<f64>() - 0.5);
                AuvState {
                    position: sample_unit(rng, p.planar_spawn) * r,
                    velocity: Vec3::zeros(),
                    battery: p.initial_battery,
                    mass: p.mass,
                    formation: None,
                }
            })
            .collect();
        WorldState {
            auvs,
            targets,
            time: 0.0,
            step_index: 0,
        }
    }

    pub fn episode_done(&self, world: &WorldState) -> bool {
        episode_done(world, self.cfg.scenario.episode_length)
    }

    /// Observations and learner features of the whole fleet.
    pub fn observe(&self, world: &WorldState) -> (Vec<Observation>, Vec<Vec<f64>>) {
        let observations: Vec<Observation> = (0..world.auvs.len())
            .map(|i| sense(world, i, &self.cfg.sonar))
            .collect();
        let features = observations
            .iter()
            .enumerate()
            .map(|(i, o)| self.encode(world, i, o))
            .collect();
        (observations, features)
    }

    fn encode(&self, world: &WorldState, i: usize, obs: &Observation) -> Vec<f64> {
        let lay = &self.cfg.observation;
        let mut f = Vec::with_capacity(self.feature_dim());
        f.extend(obs.own_position.iter().map(|x| x / lay.position_scale));
        f.extend(obs.own_velocity.iter().map(|x| x / lay.velocity_scale));
        // Tracked target first so the policy input does not depend on target labels.
        let tracked = world.tracked_target(i);
        let order: Vec<usize> = std::iter::once(tracked)
            .chain((0..world.targets.len()).filter(|&j| j != tracked))
            .collect();
        f.extend(order.iter().map(|&j| obs.target_echoes[j] / lay.echo_scale));
        f.extend(obs.peer_echoes.iter().map(|e| e / lay.echo_scale));
        if lay.relative_positions {
            let me = world.auvs[i].position;
            for &j in &order {
                push_relative(&mut f, obs.target_echoes[j], world.targets[j].position - me, lay);
            }
            let peers = (0..world.auvs.len()).filter(|&k| k != i);
            for (slot, k) in peers.enumerate() {
                push_relative(&mut f, obs.peer_echoes[slot], world.auvs[k].position - me, lay);
            }
        }
        f
    }

    /// Advances the world by one step under `joint_action`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        world: &WorldState,
        joint_action: &[Action],
        rng: &mut R,
    ) -> Result<(WorldState, StepOutcome)> {
        let n = world.auvs.len();
        if joint_action.len() != n {
            return Err(contract(format!(
                "joint action has {} entries for a fleet of {n}",
                joint_action.len()
            )));
        }
        let p = &self.cfg.physics;
        let mut next = world.clone();
        let mut energy_spent = vec![0.0; n];

        for (i, auv) in next.auvs.iter_mut().enumerate() {
            let action = joint_action[i];
            let mut force = Vec3::zeros();
            if !action.is_stay() && auv.battery >= p.move_cost {
                force += action_to_thrust(action, p.thrust);
                auv.battery -= p.move_cost;
                energy_spent[i] = p.move_cost;
            }
            if self.cfg.scenario.current {
                force += net_current_force(
                    &self.cfg.flow,
                    &self.cfg.fluid,
                    &auv.position,
                    &auv.velocity,
                    world.time,
                )
                .net;
            }
            auv.velocity = auv.velocity * (1.0 - p.damping) + force * (p.dt / auv.mass);
            auv.position += auv.velocity * p.dt;
        }

        let decay = (-p.target_ou_theta * p.dt).exp();
        let noise_scale = p.target_ou_sigma * p.dt.sqrt();
        for t in next.targets.iter_mut() {
            let xi = Vec3::new(
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            );
            let mut v = t.mean_velocity + (t.velocity - t.mean_velocity) * decay + xi * noise_scale;
            let speed = v.norm();
            if speed > t.max_speed {
                v *= t.max_speed / speed;
            }
            t.velocity = v;
            t.position += v * p.dt;
        }

        next.time = world.time + p.dt;
        next.step_index = world.step_index + 1;

        let w = &self.cfg.reward;
        let mut breakdowns = Vec::with_capacity(n);
        let mut distances = Vec::with_capacity(n);
        let mut velocity_differences = Vec::with_capacity(n);
        for i in 0..n {
            let j = next.tracked_target(i);
            let me = &next.auvs[i];
            let target = &next.targets[j];
            let d = (target.position - me.position).norm();
            let peers: Vec<f64> = (0..n)
                .filter(|&k| k != i)
                .map(|k| (next.auvs[k].position - me.position).norm())
                .collect();
            let components = RewardComponents {
                tracking: tracking_reward(d, w),
                collision: collision_reward(&peers, w),
                current_stability: current_stability_reward(
                    &me.velocity,
                    &world.auvs[i].velocity,
                    w,
                ),
                velocity_match: velocity_matching_reward(&me.velocity, &target.velocity, w),
                shaping: shaping_term(&target.position, &me.position, &me.velocity, w.epsilon_guard),
            };
            breakdowns.push(total_reward(&components, w, self.cfg.with_shaping));
            distances.push(d);
            velocity_differences.push((me.velocity - target.velocity).norm());
        }

        let (observations, features) = self.observe(&next);
        let outcome = StepOutcome {
            observations,
            features,
            rewards: breakdowns.iter().map(|b| b.total).collect(),
            shaped_rewards: breakdowns.iter().map(|b| b.shaped_total).collect(),
            breakdowns,
            done: self.episode_done(&next),
            info: StepInfo {
                distances,
                velocity_differences,
                energy_spent,
                actions: joint_action.to_vec(),
            },
        };
        Ok((next, outcome))
    }
}

pub fn episode_done(world: &WorldState, episode_length: usize) -> bool {
    world.step_index >= episode_length
}

fn push_relative(f: &mut Vec<f64>, echo: f64, rel: Vec3, lay: &ObservationLayout) {
    if echo > 0.0 {
        f.extend(rel.iter().map(|x| x / lay.position_scale));
    } else {
        f.extend([0.0; 3]);
    }
}

fn sample_unit<R: Rng + ?Sized>(rng: &mut R, planar: bool) -> Vec3 {
    loop {
        let z = if planar { 0.0 } else { StandardNormal.sample(rng) };
        let v = Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), z);
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn sample_in_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64, planar: bool) -> Vec3 {
    let dim = if planar { 2.0 } else { 3.0 };
    let r = radius * rng.random::<f64>().powf(1.0 / dim);
    sample_unit(rng, planar) * r
}
