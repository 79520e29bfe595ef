//! Per-agent networks and the centralized critic / decentralized actor
//! updates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::AttentionSelection;
use super::replay::Experience;
use crate::env::Action;
use crate::error::{contract, Result};
use crate::nn::{clip_grad_norm, soft_update, Direction, Mlp, OptimizerState, Trace};

const N_ACTIONS: usize = Action::COUNT;

/// Shape of the critic input `m1 ++ m2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticLayout {
    pub obs_dim: usize,
    /// Concatenated (observation, action) slots in `m1`.
    pub slots: usize,
    /// Width of the weighted feature sum `m2`; zero disables it.
    pub feature_width: usize,
}

impl CriticLayout {
    pub fn slot_width(&self) -> usize {
        self.obs_dim + N_ACTIONS
    }

    pub fn m2_offset(&self) -> usize {
        self.slots * self.slot_width()
    }

    pub fn input_dim(&self) -> usize {
        self.m2_offset() + self.feature_width
    }
}

/// Actor, critic and feature extractor of one agent with their targets.
#[derive(Debug, Clone)]
pub struct AgentBundle {
    pub actor: Mlp,
    pub critic: Mlp,
    pub feature: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub target_feature: Mlp,
    pub actor_opt: OptimizerState,
    pub critic_opt: OptimizerState,
    pub feature_opt: OptimizerState,
}

impl AgentBundle {
    pub fn new<R: Rng + ?Sized>(layout: &CriticLayout, hidden: usize, feature_width: usize, lr: f64, rng: &mut R) -> Result<Self> {
        let actor = Mlp::new(&[layout.obs_dim, hidden, hidden, N_ACTIONS], rng)?;
        let critic = Mlp::new(&[layout.input_dim(), hidden, hidden, 1], rng)?;
        let feature = Mlp::new(&[layout.slot_width(), feature_width, feature_width], rng)?;
        Ok(Self::from_nets(actor, critic, feature, lr))
    }

    /// Targets start as exact copies of the online networks.
    pub fn from_nets(actor: Mlp, critic: Mlp, feature: Mlp, lr: f64) -> Self {
        Self {
            actor_opt: OptimizerState::new(&actor, lr),
            critic_opt: OptimizerState::new(&critic, lr),
            feature_opt: OptimizerState::new(&feature, lr),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            target_feature: feature.clone(),
            actor,
            critic,
            feature,
        }
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        soft_update(&mut self.target_actor, &self.actor, tau)?;
        soft_update(&mut self.target_critic, &self.critic, tau)?;
        soft_update(&mut self.target_feature, &self.feature, tau)
    }

    /// Networks in checkpoint order.
    pub fn nets(&self) -> [&Mlp; 6] {
        [
            &self.actor,
            &self.critic,
            &self.feature,
            &self.target_actor,
            &self.target_critic,
            &self.target_feature,
        ]
    }
}

/// Selection and attention weights each agent's critic uses for one update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateContext {
    pub selections: Vec<AttentionSelection>,
    /// Aligned with each selection's weighted set.
    pub weights: Vec<Vec<f64>>,
}

impl UpdateContext {
    /// Same selections with every weighted set averaged evenly.
    pub fn uniform(&self) -> Self {
        Self {
            selections: self.selections.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| vec![1.0 / w.len().max(1) as f64; w.len()])
                .collect(),
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Highest-logit action of `actor` on `obs`.
pub fn greedy_action(actor: &Mlp, obs: &[f64]) -> Result<Action> {
    let logits = actor.forward(obs)?;
    Ok(Action::from_index(argmax(&logits)).expect("seven logits"))
}

/// Scratch space for assembling critic inputs.
#[derive(Debug, Default)]
struct Workspace {
    x: Vec<f64>,
    critic: Trace,
    features: Vec<Trace>,
    slot: Vec<f64>,
}

fn check_selection(layout: &CriticLayout, sel: &AttentionSelection, weights: &[f64], fleet: usize) -> Result<()> {
    if sel.concatenated.len() != layout.slots {
        return Err(contract(format!(
            "selection has {} concatenated agents, critic expects {}",
            sel.concatenated.len(),
            layout.slots
        )));
    }
    if weights.len() != sel.weighted.len() {
        return Err(contract("attention weights do not match the weighted set"));
    }
    if layout.feature_width == 0 && !sel.weighted.is_empty() {
        return Err(contract("weighted set given to a critic without feature input"));
    }
    if sel.concatenated.iter().chain(&sel.weighted).any(|&k| k >= fleet) {
        return Err(contract("selection refers to an agent outside the fleet"));
    }
    Ok(())
}

fn assemble(
    layout: &CriticLayout,
    sel: &AttentionSelection,
    weights: &[f64],
    obs: &[Vec<f64>],
    actions: &[[f64; N_ACTIONS]],
    feature: &Mlp,
    ws: &mut Workspace,
) -> Result<()> {
    ws.x.clear();
    for &k in &sel.concatenated {
        if obs[k].len() != layout.obs_dim {
            return Err(contract("observation width differs from critic layout"));
        }
        ws.x.extend_from_slice(&obs[k]);
        ws.x.extend_from_slice(&actions[k]);
    }
    if layout.feature_width > 0 {
        let start = ws.x.len();
        ws.x.resize(start + layout.feature_width, 0.0);
        ws.features.resize_with(sel.weighted.len(), Trace::default);
        for (j, &k) in sel.weighted.iter().enumerate() {
            ws.slot.clear();
            ws.slot.extend_from_slice(&obs[k]);
            ws.slot.extend_from_slice(&actions[k]);
            feature.forward_trace(&ws.slot, &mut ws.features[j])?;
            for (m, v) in ws.x[start..].iter_mut().zip(ws.features[j].output()) {
                *m += weights[j] * v;
            }
        }
    }
    Ok(())
}

/// The critic input `m1 ++ m2` for one joint observation and action.
pub fn critic_input(
    feature: &Mlp,
    layout: &CriticLayout,
    sel: &AttentionSelection,
    weights: &[f64],
    obs: &[Vec<f64>],
    actions: &[[f64; N_ACTIONS]],
) -> Result<Vec<f64>> {
    check_selection(layout, sel, weights, obs.len().min(actions.len()))?;
    let mut ws = Workspace::default();
    assemble(layout, sel, weights, obs, actions, feature, &mut ws)?;
    Ok(ws.x)
}

/// `Q_i(o, a)` through the online critic and feature extractor of `bundle`.
pub fn critic_value(
    bundle: &AgentBundle,
    layout: &CriticLayout,
    sel: &AttentionSelection,
    weights: &[f64],
    obs: &[Vec<f64>],
    actions: &[[f64; N_ACTIONS]],
) -> Result<f64> {
    let x = critic_input(&bundle.feature, layout, sel, weights, obs, actions)?;
    Ok(bundle.critic.forward(&x)?[0])
}

fn check_batch(bundles: &[AgentBundle], batch: &[&Experience], ctx: &UpdateContext, layout: &CriticLayout) -> Result<()> {
    if batch.is_empty() {
        return Err(contract("empty batch"));
    }
    let n = bundles.len();
    if ctx.selections.len() != n || ctx.weights.len() != n {
        return Err(contract("update context does not cover every agent"));
    }
    for e in batch {
        e.check()?;
        if e.n_agents() != n {
            return Err(contract("experience fleet size differs from learner"));
        }
    }
    for (sel, w) in ctx.selections.iter().zip(&ctx.weights) {
        check_selection(layout, sel, w, n)?;
    }
    Ok(())
}

/// Soft next actions of every agent from the target actors.
fn target_next_actions(bundles: &[AgentBundle], batch: &[&Experience]) -> Result<Vec<Vec<[f64; N_ACTIONS]>>> {
    batch
        .iter()
        .map(|e| {
            bundles
                .iter()
                .zip(&e.next_observations)
                .map(|(b, o)| {
                    let p = softmax(&b.target_actor.forward(o)?);
                    let mut a = [0.0; N_ACTIONS];
                    a.copy_from_slice(&p);
                    Ok(a)
                })
                .collect()
        })
        .collect()
}

/// Regression targets `y_i = r_i + γ·Q̄_i(o′, a′)`, indexed `[agent][sample]`.
pub fn critic_targets(
    bundles: &[AgentBundle],
    layout: &CriticLayout,
    batch: &[&Experience],
    ctx: &UpdateContext,
    gamma: f64,
) -> Result<Vec<Vec<f64>>> {
    check_batch(bundles, batch, ctx, layout)?;
    let next_actions = target_next_actions(bundles, batch)?;
    let mut ws = Workspace::default();
    let mut out = Vec::with_capacity(bundles.len());
    for (i, b) in bundles.iter().enumerate() {
        let (sel, w) = (&ctx.selections[i], &ctx.weights[i]);
        let mut ys = Vec::with_capacity(batch.len());
        for (e, a_next) in batch.iter().zip(&next_actions) {
            assemble(layout, sel, w, &e.next_observations, a_next, &b.target_feature, &mut ws)?;
            let q_next = b.target_critic.forward(&ws.x)?[0];
            ys.push(e.rewards[i] + gamma * q_next);
        }
        out.push(ys);
    }
    Ok(out)
}

/// Mean over agents of the population variance of the critic targets
/// across the batch.
pub fn target_variance(
    bundles: &[AgentBundle],
    layout: &CriticLayout,
    batch: &[&Experience],
    ctx: &UpdateContext,
    gamma: f64,
) -> Result<f64> {
    let ys = critic_targets(bundles, layout, batch, ctx, gamma)?;
    let var = |y: &Vec<f64>| {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64
    };
    Ok(ys.iter().map(var).sum::<f64>() / ys.len().max(1) as f64)
}

/// One optimizer step on every critic and feature extractor against the
/// shared loss `Σ_i mean_b (Q_i − y_i)²`; returns the loss before the step.
pub fn critic_update(
    bundles: &mut [AgentBundle],
    layout: &CriticLayout,
    batch: &[&Experience],
    ctx: &UpdateContext,
    gamma: f64,
    grad_clip: Option<f64>,
) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(contract(format!("discount must lie in [0, 1), got {gamma}")));
    }
    let targets = critic_targets(bundles, layout, batch, ctx, gamma)?;
    let inv_b = 1.0 / batch.len() as f64;
    let mut ws = Workspace::default();
    let mut total = 0.0;
    for (i, b) in bundles.iter_mut().enumerate() {
        let (sel, w) = (&ctx.selections[i], &ctx.weights[i]);
        let mut g_critic = b.critic.zero_grads();
        let mut g_feature = b.feature.zero_grads();
        let mut loss = 0.0;
        for (e, &y) in batch.iter().zip(&targets[i]) {
            assemble(layout, sel, w, &e.observations, &e.actions, &b.feature, &mut ws)?;
            b.critic.forward_trace(&ws.x, &mut ws.critic)?;
            let q = ws.critic.output()[0];
            loss += (q - y) * (q - y) * inv_b;
            let d_x = b.critic.backward_into(&ws.critic, &[2.0 * (q - y) * inv_b], &mut g_critic)?;
            let g_m2 = &d_x[layout.m2_offset()..];
            for (j, &wj) in w.iter().enumerate() {
                let up: Vec<f64> = g_m2.iter().map(|g| wj * g).collect();
                b.feature.backward_into(&ws.features[j], &up, &mut g_feature)?;
            }
        }
        if let Some(c) = grad_clip {
            clip_grad_norm(&mut g_critic, c);
            clip_grad_norm(&mut g_feature, c);
        }
        b.critic_opt.step(&mut b.critic, &g_critic, Direction::Minimize)?;
        if !sel.weighted.is_empty() {
            b.feature_opt.step(&mut b.feature, &g_feature, Direction::Minimize)?;
        }
        total += loss;
    }
    Ok(total)
}

/// Standard Gumbel noise for every (sample, action) pair.
pub fn gumbel_noise<R: Rng + ?Sized>(n_samples: usize, rng: &mut R) -> Vec<[f64; N_ACTIONS]> {
    (0..n_samples)
        .map(|_| {
            let mut g = [0.0; N_ACTIONS];
            for v in &mut g {
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                *v = -(-u.ln()).ln();
            }
            g
        })
        .collect()
}

/// Mean critic value of agent `i` with its own action replaced by the relaxed
/// sample `softmax((logits + noise) / temperature)`, minus
/// `logit_penalty · mean(logits²)`, and the gradient of that objective with
/// respect to the actor parameters.
#[allow(clippy::too_many_arguments)]
pub fn actor_objective(
    bundle: &AgentBundle,
    agent: usize,
    layout: &CriticLayout,
    batch: &[&Experience],
    sel: &AttentionSelection,
    weights: &[f64],
    temperature: f64,
    logit_penalty: f64,
    noise: &[[f64; N_ACTIONS]],
) -> Result<(f64, Vec<f64>)> {
    if noise.len() != batch.len() {
        return Err(contract("one noise vector per sample required"));
    }
    if sel.concatenated.first() != Some(&agent) {
        return Err(contract("critic slot 0 must hold the updated agent"));
    }
    check_selection(layout, sel, weights, batch.first().map_or(0, |e| e.n_agents()))?;
    let inv_b = 1.0 / batch.len() as f64;
    let mut ws = Workspace::default();
    let mut actor_trace = Trace::default();
    let mut grads = bundle.actor.zero_grads();
    let mut critic_sink = bundle.critic.zero_grads();
    let mut objective = 0.0;
    let a_off = layout.obs_dim;
    let reg = logit_penalty * inv_b / N_ACTIONS as f64;
    for (e, g) in batch.iter().zip(noise) {
        bundle.actor.forward_trace(&e.observations[agent], &mut actor_trace)?;
        let logits = actor_trace.output();
        objective -= reg * logits.iter().map(|z| z * z).sum::<f64>();
        let perturbed: Vec<f64> = actor_trace
            .output()
            .iter()
            .zip(g)
            .map(|(z, n)| (z + n) / temperature)
            .collect();
        let y = softmax(&perturbed);
        let mut actions = e.actions.clone();
        actions[agent].copy_from_slice(&y);
        assemble(layout, sel, weights, &e.observations, &actions, &bundle.feature, &mut ws)?;
        bundle.critic.forward_trace(&ws.x, &mut ws.critic)?;
        objective += ws.critic.output()[0] * inv_b;
        let d_x = bundle.critic.backward_into(&ws.critic, &[inv_b], &mut critic_sink)?;
        let dy = &d_x[a_off..a_off + N_ACTIONS];
        let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
        let dz: Vec<f64> = y
            .iter()
            .zip(dy)
            .zip(actor_trace.output())
            .map(|((yk, dk), z)| yk * (dk - dot) / temperature - 2.0 * reg * z)
            .collect();
        bundle.actor.backward_into(&actor_trace, &dz, &mut grads)?;
    }
    Ok((objective, grads))
}

/// One ascent step per actor; returns each agent's gradient norm before clipping.
#[allow(clippy::too_many_arguments)]
pub fn actor_update<R: Rng + ?Sized>(
    bundles: &mut [AgentBundle],
    layout: &CriticLayout,
    batch: &[&Experience],
    ctx: &UpdateContext,
    temperature: f64,
    logit_penalty: f64,
    grad_clip: Option<f64>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_batch(bundles, batch, ctx, layout)?;
    let mut norms = Vec::with_capacity(bundles.len());
    for (i, b) in bundles.iter_mut().enumerate() {
        let noise = gumbel_noise(batch.len(), rng);
        let (_, mut g) = actor_objective(b, i, layout, batch, &ctx.selections[i], &ctx.weights[i], temperature, logit_penalty, &noise)?;
        let norm = match grad_clip {
            Some(c) => clip_grad_norm(&mut g, c),
            None => g.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        b.actor_opt.step(&mut b.actor, &g, Direction::Maximize)?;
        norms.push(norm);
    }
    Ok(norms)
}
