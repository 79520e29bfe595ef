//! Hierarchical control plane: a global controller on the surface, local
//! controllers that each run a slice of the fleet, and executors that track.
//!
//! Every round the controllers poll their subordinates for status (phase 1)
//! and then push task specifications down (phase 2). Replies to either kind
//! of request refresh the controller's network view. Messages travel over a
//! seeded lossy channel, so views go stale and tasks go unacknowledged in the
//! same way they would over an acoustic link.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asma::{solve_bounded, AssignConfig, FormationPlan};
use crate::env::{Action, EnvConfig, TrackingEnv};
use crate::error::{contract, Error, Result};
use crate::Vec3;

/// Rounds without a fresh reply after which an entry counts as stale.
pub const STALE_AFTER: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    GlobalController,
    LocalController,
    Executor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub role: Role,
    pub index: usize,
}

impl NodeId {
    pub fn gc() -> Self {
        Self {
            role: Role::GlobalController,
            index: 0,
        }
    }
    pub fn lc(index: usize) -> Self {
        Self {
            role: Role::LocalController,
            index,
        }
    }
    pub fn et(index: usize) -> Self {
        Self {
            role: Role::Executor,
            index,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.role {
            Role::GlobalController => "gc",
            Role::LocalController => "lc",
            Role::Executor => "et",
        };
        write!(f, "{tag}{}", self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Idle,
    Tasked,
}

/// What a subordinate reports about itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusRecord {
    pub position: Vec3,
    pub battery: f64,
    pub status: NodeStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub position: Vec3,
    pub battery: f64,
    pub status: NodeStatus,
    /// Round of the last reply that reached the controller; `None` before
    /// first contact.
    pub last_seen_round: Option<u64>,
}

impl ViewEntry {
    pub fn unseen(position: Vec3, battery: f64) -> Self {
        Self {
            position,
            battery,
            status: NodeStatus::Idle,
            last_seen_round: None,
        }
    }

    pub fn is_stale(&self, round: u64) -> bool {
        self.last_seen_round.is_none_or(|r| round.saturating_sub(r) >= STALE_AFTER)
    }

    fn refresh(&mut self, s: &StatusRecord, round: u64) {
        self.position = s.position;
        self.battery = s.battery;
        self.status = s.status;
        self.last_seen_round = Some(round);
    }
}

/// A controller's picture of its subordinates, one entry each.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NetworkView {
    pub entries: BTreeMap<NodeId, ViewEntry>,
}

impl NetworkView {
    pub fn stale(&self, round: u64) -> Vec<NodeId> {
        self.entries
            .iter()
            .filter(|(_, e)| e.is_stale(round))
            .map(|(&k, _)| k)
            .collect()
    }
}

/// An axis-aligned box of the arena.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Region {
    pub fn centre(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }
}

/// Equal-volume slabs along x of the cube `[-half, half]³`.
pub fn controller_regions(n: usize, half_extent: f64) -> Vec<Region> {
    let w = 2.0 * half_extent / n.max(1) as f64;
    (0..n)
        .map(|k| Region {
            min: [-half_extent + k as f64 * w, -half_extent, -half_extent],
            max: [-half_extent + (k + 1) as f64 * w, half_extent, half_extent],
        })
        .collect()
}

/// Work handed to one local controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub region: Region,
    /// Targets this controller is responsible for, ascending.
    pub targets: Vec<usize>,
    pub checkpoint_version: u64,
    /// `(target, members)` for each formation in `targets`.
    pub formations: Vec<(usize, Vec<usize>)>,
}

impl TaskSpec {
    pub fn executors(&self) -> impl Iterator<Item = usize> + '_ {
        self.formations.iter().flat_map(|(_, m)| m.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    SynRequest,
    SynReply(StatusRecord),
    OpRequest(TaskSpec),
    OpReply(StatusRecord),
}

impl MessageKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SynRequest => "syn_request",
            Self::SynReply(_) => "syn_reply",
            Self::OpRequest(_) => "op_request",
            Self::OpReply(_) => "op_reply",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeaconMessage {
    pub kind: MessageKind,
    pub sender: NodeId,
    pub receiver: NodeId,
    /// Round of the request; replies copy it from the request they answer.
    pub round: u64,
}

/// One line of the protocol trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: u64,
    pub variant: String,
    pub sender: String,
    pub receiver: String,
    pub delivered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    /// Rounds a message spends in flight.
    pub latency: u64,
    /// Independent drop probability per message.
    pub loss: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { latency: 0, loss: 0.0 }
    }
}

/// Seeded lossy link shared by every controller. Loss is decided when a
/// message is sent; lost messages are traced and never arrive.
#[derive(Debug, Clone)]
pub struct Channel {
    pub config: ChannelConfig,
    rng: ChaCha8Rng,
    queue: VecDeque<(u64, BeaconMessage)>,
    trace: Vec<TraceRecord>,
}

impl Channel {
    pub fn new(config: ChannelConfig, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.loss) {
            return Err(Error::Config("channel loss must lie in [0, 1]".into()));
        }
        Ok(Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: VecDeque::new(),
            trace: Vec::new(),
        })
    }

    /// Sends at `now`; returns whether the message will be delivered.
    pub fn send(&mut self, msg: BeaconMessage, now: u64) -> bool {
        let delivered = self.config.loss <= 0.0 || self.rng.random::<f64>() >= self.config.loss;
        self.trace.push(TraceRecord {
            round: now,
            variant: msg.kind.name().into(),
            sender: msg.sender.to_string(),
            receiver: msg.receiver.to_string(),
            delivered,
        });
        if delivered {
            self.queue.push_back((now + self.config.latency, msg));
        }
        delivered
    }

    /// Removes and returns, in send order, delivered messages for `receiver`
    /// that are due by `now`.
    pub fn receive(&mut self, receiver: NodeId, now: u64) -> Vec<BeaconMessage> {
        let mut out = Vec::new();
        let mut keep = VecDeque::with_capacity(self.queue.len());
        for (due, m) in self.queue.drain(..) {
            if due <= now && m.receiver == receiver {
                out.push(m);
            } else {
                keep.push_back((due, m));
            }
        }
        self.queue = keep;
        out
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn write_trace<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.trace {
            let line = serde_json::to_string(r).map_err(|e| Error::Parse(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// A subordinate's own state: what it reports and the task it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Subordinate {
    pub record: StatusRecord,
    pub task: Option<TaskSpec>,
}

impl Subordinate {
    pub fn new(position: Vec3, battery: f64) -> Self {
        Self {
            record: StatusRecord {
                position,
                battery,
                status: NodeStatus::Idle,
            },
            task: None,
        }
    }

    fn adopt(&mut self, task: TaskSpec) {
        self.task = Some(task);
        self.record.status = NodeStatus::Tasked;
    }
}

/// Subordinates answer every request that reaches them this round.
fn answer_requests(
    subordinates: &mut BTreeMap<NodeId, Subordinate>,
    round: u64,
    channel: &mut Channel,
) {
    let ids: Vec<NodeId> = subordinates.keys().copied().collect();
    for id in ids {
        for m in channel.receive(id, round) {
            let Some(sub) = subordinates.get_mut(&id) else { continue };
            let kind = match m.kind {
                MessageKind::SynRequest => MessageKind::SynReply(sub.record.clone()),
                MessageKind::OpRequest(task) => {
                    sub.adopt(task);
                    MessageKind::OpReply(sub.record.clone())
                }
                _ => continue,
            };
            channel.send(
                BeaconMessage {
                    kind,
                    sender: id,
                    receiver: m.sender,
                    round: m.round,
                },
                round,
            );
        }
    }
}

/// Applies replies that reached `controller` and answer a request of this
/// round. Returns the refreshed subordinates.
fn collect_replies(view: &mut NetworkView, controller: NodeId, round: u64, channel: &mut Channel) -> BTreeSet<NodeId> {
    let mut refreshed = BTreeSet::new();
    for m in channel.receive(controller, round) {
        let (MessageKind::SynReply(s) | MessageKind::OpReply(s)) = &m.kind else { continue };
        if m.round != round {
            continue;
        }
        if let Some(e) = view.entries.get_mut(&m.sender) {
            e.refresh(s, round);
            refreshed.insert(m.sender);
        }
    }
    refreshed
}

/// Phase 1: poll every subordinate in `view` and fold the replies in.
/// Returns the subordinates whose entry was refreshed.
pub fn phase1_sync(
    view: &mut NetworkView,
    controller: NodeId,
    subordinates: &mut BTreeMap<NodeId, Subordinate>,
    round: u64,
    channel: &mut Channel,
) -> BTreeSet<NodeId> {
    let targets: Vec<NodeId> = view.entries.keys().copied().collect();
    for to in targets {
        channel.send(
            BeaconMessage {
                kind: MessageKind::SynRequest,
                sender: controller,
                receiver: to,
                round,
            },
            round,
        );
    }
    answer_requests(subordinates, round, channel);
    collect_replies(view, controller, round, channel)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DispatchReport {
    pub acknowledged: Vec<NodeId>,
    pub unacknowledged: Vec<NodeId>,
}

/// Phase 2: send each task to its subordinate. Operation replies refresh the
/// view exactly like status replies.
pub fn phase2_dispatch(
    view: &mut NetworkView,
    controller: NodeId,
    tasks: &[(NodeId, TaskSpec)],
    subordinates: &mut BTreeMap<NodeId, Subordinate>,
    round: u64,
    channel: &mut Channel,
) -> Result<DispatchReport> {
    if let Some((to, _)) = tasks.iter().find(|(to, _)| !view.entries.contains_key(to)) {
        return Err(contract(format!("{controller} has no subordinate {to}")));
    }
    for (to, task) in tasks {
        channel.send(
            BeaconMessage {
                kind: MessageKind::OpRequest(task.clone()),
                sender: controller,
                receiver: *to,
                round,
            },
            round,
        );
    }
    answer_requests(subordinates, round, channel);
    let refreshed = collect_replies(view, controller, round, channel);
    let (acknowledged, unacknowledged) = tasks.iter().map(|(to, _)| *to).partition(|to| refreshed.contains(to));
    Ok(DispatchReport {
        acknowledged,
        unacknowledged,
    })
}

/// Sum of centroid-to-region-centre distances of a formation-to-controller map.
pub fn partition_cost(centroids: &[Vec3], regions: &[Region], owner: &[usize]) -> f64 {
    owner
        .iter()
        .zip(centroids)
        .map(|(&k, c)| (c - regions[k].centre()).norm())
        .sum()
}

/// Splits a formation plan among local controllers.
///
/// Whole formations go to controllers, each controller taking between
/// ⌊F/L⌋ and ⌈F/L⌉ of the F formations, so that the summed distance from
/// formation centroids to controller region centres is least. Positions
/// come from `view`, keyed by executor index. Surplus controllers get an
/// empty task.
pub fn partition_tasks(
    view: &NetworkView,
    plan: &FormationPlan,
    regions: &[Region],
    checkpoint_version: u64,
) -> Result<Vec<TaskSpec>> {
    if regions.is_empty() {
        return Err(Error::Config("at least one local controller is required".into()));
    }
    if !plan.is_valid() {
        return Err(contract("formation plan leaves a target uncovered or a vehicle unassigned"));
    }
    let centroids = formation_centroids(view, plan)?;
    let (f, l) = (centroids.len(), regions.len());
    let scores: Vec<Vec<f64>> = centroids
        .iter()
        .map(|c| regions.iter().map(|r| -(c - r.centre()).norm()).collect())
        .collect();
    let (owner, _, _, _) = solve_bounded(&scores, f / l, f.div_ceil(l), AssignConfig::default().exhaustive_limit);
    Ok(regions
        .iter()
        .enumerate()
        .map(|(k, &region)| {
            let targets: Vec<usize> = (0..f).filter(|&j| owner[j] == k).collect();
            TaskSpec {
                region,
                formations: targets.iter().map(|&j| (j, plan.formations[j].clone())).collect(),
                targets,
                checkpoint_version,
            }
        })
        .collect())
}

/// Mean member position of each formation.
pub fn formation_centroids(view: &NetworkView, plan: &FormationPlan) -> Result<Vec<Vec3>> {
    plan.formations
        .iter()
        .map(|members| {
            let mut sum = Vec3::zeros();
            for &i in members {
                let e = view
                    .entries
                    .get(&NodeId::et(i))
                    .ok_or_else(|| contract(format!("no view entry for executor {i}")))?;
                sum += e.position;
            }
            Ok(sum / members.len().max(1) as f64)
        })
        .collect()
}

/// Every target appears in exactly one task.
pub fn covers_exactly_once(tasks: &[TaskSpec], n_targets: usize) -> bool {
    let mut seen = vec![0usize; n_targets];
    for t in tasks {
        for &j in &t.targets {
            match seen.get_mut(j) {
                Some(c) => *c += 1,
                None => return false,
            }
        }
    }
    seen.iter().all(|&c| c == 1)
}

/// Settings of a whole-hierarchy protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub local_controllers: usize,
    pub executors: usize,
    pub targets: usize,
    pub rounds: u64,
    pub latency: u64,
    pub loss: f64,
    pub seed: u64,
    pub checkpoint_version: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            local_controllers: 2,
            executors: 12,
            targets: 4,
            rounds: 100,
            latency: 0,
            loss: 0.0,
            seed: 0,
            checkpoint_version: 1,
        }
    }
}

/// Per-round outcome and invariant checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub stale: Vec<String>,
    pub tasks_acknowledged: usize,
    pub tasks_sent: usize,
    /// Every target lies in exactly one local task.
    pub coverage: bool,
    /// Every view entry that changed its last-seen round was answered by a
    /// delivered reply of this round.
    pub freshness: bool,
    /// No last-seen round lies in the future.
    pub causality: bool,
}

#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub rounds: Vec<RoundReport>,
    pub trace: Vec<TraceRecord>,
}

impl ProtocolRun {
    pub fn invariants_hold(&self) -> bool {
        self.rounds.iter().all(|r| r.coverage && r.freshness && r.causality)
    }

    pub fn trace_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for r in &self.trace {
            serde_json::to_writer(&mut out, r).map_err(|e| Error::Parse(e.to_string()))?;
            out.push(b'\n');
        }
        Ok(out)
    }
}

fn last_seen(view: &NetworkView) -> BTreeMap<NodeId, Option<u64>> {
    view.entries.iter().map(|(&k, e)| (k, e.last_seen_round)).collect()
}

fn fresh_only_where_refreshed(
    before: &BTreeMap<NodeId, Option<u64>>,
    after: &NetworkView,
    refreshed: &BTreeSet<NodeId>,
    round: u64,
) -> bool {
    after.entries.iter().all(|(k, e)| match before.get(k) {
        Some(&old) if old != e.last_seen_round => refreshed.contains(k) && e.last_seen_round == Some(round),
        _ => true,
    })
}

/// Runs the two-phase protocol over a seeded world for `rounds` rounds.
///
/// Targets drift while the fleet holds station; the formation plan comes
/// from `plan_for`. Local controllers start with executors dealt round-robin
/// and take over the members of their formations once their task arrives.
pub fn run_protocol<F>(cfg: &ProtocolConfig, env_cfg: &EnvConfig, mut plan_for: F) -> Result<ProtocolRun>
where
    F: FnMut(&crate::env::WorldState) -> Result<Vec<usize>>,
{
    if cfg.local_controllers == 0 || cfg.executors == 0 || cfg.targets == 0 {
        return Err(Error::Config("protocol needs controllers, executors and targets".into()));
    }
    let mut ec = env_cfg.clone();
    ec.scenario.n_auvs = cfg.executors;
    ec.scenario.n_targets = cfg.targets;
    ec.scenario.episode_length = usize::try_from(cfg.rounds).unwrap_or(usize::MAX).max(1);
    let env = TrackingEnv::new(ec)?;
    let mut world_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut world = env.reset(&mut world_rng);
    let plan = FormationPlan::from_assignment(plan_for(&world)?, cfg.targets);
    let mut channel = Channel::new(
        ChannelConfig {
            latency: cfg.latency,
            loss: cfg.loss,
        },
        cfg.seed ^ 0xC4A2_2E15,
    )?;
    let regions = controller_regions(cfg.local_controllers, env.config().physics.world_scale);
    let stay = vec![Action::Stay; cfg.executors];

    let mut executors: BTreeMap<NodeId, Subordinate> = world
        .auvs
        .iter()
        .enumerate()
        .map(|(i, a)| (NodeId::et(i), Subordinate::new(a.position, a.battery)))
        .collect();
    let mut locals: BTreeMap<NodeId, Subordinate> = regions
        .iter()
        .enumerate()
        .map(|(k, r)| (NodeId::lc(k), Subordinate::new(r.centre(), env.config().physics.initial_battery)))
        .collect();
    let mut lc_views: Vec<NetworkView> = vec![NetworkView::default(); cfg.local_controllers];
    for (i, a) in world.auvs.iter().enumerate() {
        lc_views[i % cfg.local_controllers]
            .entries
            .insert(NodeId::et(i), ViewEntry::unseen(a.position, a.battery));
    }
    let mut gc_view = NetworkView {
        entries: locals
            .iter()
            .map(|(&k, s)| (k, ViewEntry::unseen(s.record.position, s.record.battery)))
            .collect(),
    };
    let mut global = NetworkView {
        entries: world
            .auvs
            .iter()
            .enumerate()
            .map(|(i, a)| (NodeId::et(i), ViewEntry::unseen(a.position, a.battery)))
            .collect(),
    };

    let mut reports = Vec::with_capacity(cfg.rounds as usize);
    for round in 0..cfg.rounds {
        if round > 0 {
            world = env.step(&world, &stay, &mut world_rng)?.0;
        }
        for (i, a) in world.auvs.iter().enumerate() {
            let s = executors.get_mut(&NodeId::et(i)).expect("every executor is registered");
            s.record.position = a.position;
            s.record.battery = a.battery;
        }
        let mut freshness = true;

        // Phase 1, bottom tier then top tier.
        for (k, view) in lc_views.iter_mut().enumerate() {
            let before = last_seen(view);
            let got = phase1_sync(view, NodeId::lc(k), &mut executors, round, &mut channel);
            freshness &= fresh_only_where_refreshed(&before, view, &got, round);
        }
        let before = last_seen(&gc_view);
        let got = phase1_sync(&mut gc_view, NodeId::gc(), &mut locals, round, &mut channel);
        freshness &= fresh_only_where_refreshed(&before, &gc_view, &got, round);
        // Reports of controllers that answered feed the global picture.
        for k in &got {
            for (id, e) in &lc_views[k.index].entries {
                let g = global.entries.get_mut(id).expect("every executor is registered");
                if e.last_seen_round > g.last_seen_round {
                    *g = e.clone();
                }
            }
        }

        // Phase 2.
        let tasks = partition_tasks(&global, &plan, &regions, cfg.checkpoint_version)?;
        let coverage = covers_exactly_once(&tasks, cfg.targets);
        let sends: Vec<(NodeId, TaskSpec)> = tasks
            .iter()
            .enumerate()
            .map(|(k, t)| (NodeId::lc(k), t.clone()))
            .collect();
        let before = last_seen(&gc_view);
        let report = phase2_dispatch(&mut gc_view, NodeId::gc(), &sends, &mut locals, round, &mut channel)?;
        freshness &= fresh_only_where_refreshed(&before, &gc_view, &report.acknowledged.iter().copied().collect(), round);
        let (mut acked, mut sent) = (report.acknowledged.len(), sends.len());

        for k in 0..cfg.local_controllers {
            let Some(task) = locals[&NodeId::lc(k)].task.clone() else { continue };
            // Take over the executors of the held task.
            let members: BTreeSet<NodeId> = task.executors().map(NodeId::et).collect();
            let view = &mut lc_views[k];
            view.entries.retain(|id, _| members.contains(id));
            for &id in &members {
                view.entries
                    .entry(id)
                    .or_insert_with(|| global.entries[&id].clone());
            }
            let before = last_seen(view);
            let orders: Vec<(NodeId, TaskSpec)> = members.iter().map(|&id| (id, task.clone())).collect();
            let r = phase2_dispatch(view, NodeId::lc(k), &orders, &mut executors, round, &mut channel)?;
            freshness &= fresh_only_where_refreshed(&before, view, &r.acknowledged.iter().copied().collect(), round);
            acked += r.acknowledged.len();
            sent += orders.len();
        }

        let causality = lc_views
            .iter()
            .chain([&gc_view, &global])
            .flat_map(|v| v.entries.values())
            .all(|e| e.last_seen_round.is_none_or(|r| r <= round));
        let mut stale: Vec<String> = gc_view.stale(round).iter().map(ToString::to_string).collect();
        for v in &lc_views {
            stale.extend(v.stale(round).iter().map(ToString::to_string));
        }
        reports.push(RoundReport {
            round,
            stale,
            tasks_acknowledged: acked,
            tasks_sent: sent,
            coverage,
            freshness,
            causality,
        });
    }
    Ok(ProtocolRun {
        rounds: reports,
        trace: channel.trace().to_vec(),
    })
}
