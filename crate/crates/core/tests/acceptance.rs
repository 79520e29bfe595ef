//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.
//!
//! `cargo test -p dsbm-core --test acceptance -- 3 9` runs a subset.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use dsbm_core::asma::{self, assign, formation_bounds, AssignConfig, MembershipVector, ScoreMatrix};
use dsbm_core::config::RunConfig;
use dsbm_core::control::{run_protocol, ProtocolConfig};
use dsbm_core::env::{action_to_thrust, Action, TrackingEnv};
use dsbm_core::learner::{
    actor_objective, all_agents, attention_weights, build_selection, gumbel_noise, resample, select_best,
    target_variance, train, AgentBundle, AsmaPlanner, CriticLayout, EpisodeLog, Experience, Learner, ReplayBuffer,
};
use dsbm_core::metrics::{evaluate, GreedyPolicy, RandomPolicy, StayPolicy};
use dsbm_core::nn::{soft_update, Mlp};
use dsbm_core::ocean::{drag_force, lift_force, net_current_force, virtual_mass_force, FlowField, FlowMode, FluidParams};
use dsbm_core::reward::{self, RewardComponents, RewardWeights};
use dsbm_core::sonar::SonarParams;
use dsbm_core::Vec3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Largest relative error seen per formula.
#[derive(Default)]
struct Worst {
    rows: Vec<(&'static str, f64, usize)>,
}

impl Worst {
    /// `scale` is the magnitude the error is measured against; for sums it is
    /// the sum of the absolute summands.
    fn check(&mut self, name: &'static str, got: f64, want: f64, scale: f64) {
        let s = scale.abs().max(got.abs()).max(want.abs());
        let e = if s == 0.0 { 0.0 } else { (got - want).abs() / s };
        match self.rows.iter_mut().find(|r| r.0 == name) {
            Some(r) => {
                r.1 = r.1.max(e);
                r.2 += 1;
            }
            None => self.rows.push((name, e, 1)),
        }
    }

    fn vec(&mut self, name: &'static str, got: &Vec3, want: &Vec3) {
        for k in 0..3 {
            self.check(name, got[k], want[k], want.norm());
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
    Vec3::new(uniform(rng, -s, s), uniform(rng, -s, s), uniform(rng, -s, s))
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut w = Worst::default();
    const N: usize = 2000;
    for _ in 0..N {
        // Sonar equation.
        let p = SonarParams {
            source_level: uniform(&mut rng, 150.0, 230.0),
            noise_level: uniform(&mut rng, 40.0, 90.0),
            directivity_index: uniform(&mut rng, 0.0, 30.0),
            detection_threshold: uniform(&mut rng, 0.0, 20.0),
            target_strength_target: uniform(&mut rng, -10.0, 30.0),
            target_strength_auv: uniform(&mut rng, -20.0, 20.0),
            absorption: uniform(&mut rng, 0.0, 0.1),
            reference_range: uniform(&mut rng, 0.5, 5.0),
        };
        let r = uniform(&mut rng, 0.1, 3000.0);
        let ts = uniform(&mut rng, -20.0, 30.0);
        let tl = 20.0 * (r / p.reference_range).ln() / std::f64::consts::LN_10 + p.absorption * r;
        let terms = [p.source_level, -2.0 * tl, ts, -p.noise_level, p.directivity_index, -p.detection_threshold];
        w.check(
            "sonar equation",
            p.echo_margin(r, ts).unwrap(),
            terms.iter().sum(),
            terms.iter().map(|x| x.abs()).sum(),
        );

        // Current forces.
        let fp = FluidParams {
            rho: uniform(&mut rng, 900.0, 1100.0),
            mu: 1e-3,
            c_d: uniform(&mut rng, 0.1, 2.0),
            c_l: uniform(&mut rng, 0.05, 1.0),
            c_vm: uniform(&mut rng, 0.1, 2.0),
            frontal_area: uniform(&mut rng, 0.01, 2.0),
            volume: uniform(&mut rng, 0.01, 1.0),
        };
        let u = rand_vec(&mut rng, 3.0);
        let speed = (u.x * u.x + u.y * u.y + u.z * u.z).sqrt();
        let drag = Vec3::new(u.x, u.y, u.z) * (0.5 * fp.rho * fp.c_d * fp.frontal_area * speed);
        w.vec("drag", &drag_force(&fp, &u), &drag);
        let uh = u / speed;
        let perp = uh.cross(&Vec3::z().cross(&uh));
        let lift = perp / perp.norm() * (0.5 * fp.rho * speed * speed * fp.c_l * fp.frontal_area);
        w.vec("lift", &lift_force(&fp, &u), &lift);
        let a = rand_vec(&mut rng, 1.0);
        let vm = Vec3::new(fp.rho * fp.c_vm * fp.volume * a.x, fp.rho * fp.c_vm * fp.volume * a.y, fp.rho * fp.c_vm * fp.volume * a.z);
        w.vec("virtual mass", &virtual_mass_force(&fp, &a), &vm);

        // Membership.
        let lo = uniform(&mut rng, -10.0, 10.0);
        let hi = lo + uniform(&mut rng, 0.1, 20.0);
        let x = uniform(&mut rng, lo - 5.0, hi + 5.0);
        w.check("membership", asma::membership(x, lo, hi).unwrap(), ((x - lo) / (hi - lo)).clamp(0.0, 1.0), 1.0);

        // Expert rules.
        let m = MembershipVector {
            speed: uniform(&mut rng, 0.0, 1.0),
            acceleration: uniform(&mut rng, 0.0, 1.0),
            battery: uniform(&mut rng, 0.0, 1.0),
            capacity: uniform(&mut rng, 0.0, 1.0),
            energy_rate: uniform(&mut rng, 0.0, 1.0),
        };
        let big_d = uniform(&mut rng, 10.0, 2000.0);
        let d = uniform(&mut rng, 0.0, 1.5 * big_d);
        let (v, al, be, ka, ep) = (m.speed, m.acceleration, m.battery, m.capacity, m.energy_rate);
        let want = [
            (v * v * v + 2.0 * al * al) / (1.0 + (-be).exp()) * (big_d - d) / big_d,
            0.5 * ((ka - ep).exp() + (ep - ka).exp()) * (ka - ep).abs().sqrt(),
            (v * v + al * al + ep * ep) / 3.0,
            1.0 / (1.0 + (al - v).exp()),
            if v <= 0.3 { v * ka } else { 0.0 },
            if v >= 0.7 { v * be * d / big_d } else { 0.0 },
        ];
        let got = asma::rule_contributions(&m, d, big_d);
        const RULES: [&str; 6] = ["rule 1", "rule 2", "rule 3", "rule 4", "rule 5", "rule 6"];
        for k in 0..6 {
            w.check(RULES[k], got[k], want[k], 0.0);
        }
        w.check(
            "rule total",
            asma::rule_scores(&m, d, big_d),
            want.iter().sum(),
            want.iter().map(|x| x.abs()).sum(),
        );

        // Reward terms.
        let rw = RewardWeights {
            w_track: uniform(&mut rng, 0.1, 3.0),
            w_collide: uniform(&mut rng, 0.1, 3.0),
            w_current: uniform(&mut rng, 0.1, 3.0),
            w_velocity: uniform(&mut rng, 0.1, 3.0),
            omega1: uniform(&mut rng, 0.1, 2.0),
            omega2: uniform(&mut rng, 0.1, 2.0),
            omega3: uniform(&mut rng, 0.1, 2.0),
            omega4: uniform(&mut rng, 0.1, 2.0),
            d_be_track: uniform(&mut rng, 10.0, 200.0),
            d_be_separation: uniform(&mut rng, 10.0, 200.0),
            ..RewardWeights::default()
        };
        let dt = uniform(&mut rng, 0.0, 400.0);
        w.check(
            "tracking reward",
            reward::tracking_reward(dt, &rw),
            -rw.omega1 * (dt - rw.d_be_track).abs() / rw.d_be_track,
            0.0,
        );
        let peers: Vec<f64> = (0..rng.random_range(0..12)).map(|_| uniform(&mut rng, 0.0, 400.0)).collect();
        let mut coll = 0.0;
        for q in &peers {
            coll -= rw.omega2 * ((q - rw.d_be_separation) / rw.d_be_separation).abs();
        }
        w.check("collision reward", reward::collision_reward(&peers, &rw), coll, 0.0);
        let (vc, vp) = (rand_vec(&mut rng, 2.0), rand_vec(&mut rng, 2.0));
        let ratio = |num: Vec3, den: Vec3| {
            let n = (num.x * num.x + num.y * num.y + num.z * num.z).sqrt();
            let d = (den.x * den.x + den.y * den.y + den.z * den.z).sqrt().max(rw.epsilon_guard);
            (n / d).min(rw.ratio_cap)
        };
        let cur = -rw.omega3 * ratio(vc - vp, vp);
        w.check("current stability reward", reward::current_stability_reward(&vc, &vp, &rw), cur, 0.0);
        let (va, vt) = (rand_vec(&mut rng, 2.0), rand_vec(&mut rng, 2.0));
        let vel = -rw.omega4 * ratio(va - vt, vt);
        w.check("velocity matching reward", reward::velocity_matching_reward(&va, &vt, &rw), vel, 0.0);
        let (pt, pa) = (rand_vec(&mut rng, 500.0), rand_vec(&mut rng, 500.0));
        let b = pt - pa;
        let dot = b.x * va.x + b.y * va.y + b.z * va.z;
        let cosine = dot / ((b.x * b.x + b.y * b.y + b.z * b.z) * (va.x * va.x + va.y * va.y + va.z * va.z)).sqrt();
        w.check("shaping term", reward::shaping_term(&pt, &pa, &va, rw.epsilon_guard), cosine, 0.0);

        let c = RewardComponents {
            tracking: uniform(&mut rng, -3.0, 0.0),
            collision: uniform(&mut rng, -3.0, 0.0),
            current_stability: uniform(&mut rng, -3.0, 0.0),
            velocity_match: uniform(&mut rng, -3.0, 0.0),
            shaping: uniform(&mut rng, -1.0, 1.0),
        };
        let parts = [
            rw.w_track * c.tracking,
            rw.w_collide * c.collision,
            rw.w_current * c.current_stability,
            rw.w_velocity * c.velocity_match,
        ];
        let total: f64 = parts.iter().sum();
        let scale: f64 = parts.iter().map(|x| x.abs()).sum();
        let on = reward::total_reward(&c, &rw, true);
        let off = reward::total_reward(&c, &rw, false);
        w.check("reward total", on.total, total, scale);
        w.check("reshaped total", on.shaped_total, total + c.shaping, scale + c.shaping.abs());
        w.check("unshaped total", off.shaped_total, total, scale);

        // Attention weights.
        let k = rng.random_range(1..10);
        let rs: Vec<f64> = (0..k).map(|_| uniform(&mut rng, -5.0, 5.0)).collect();
        let temp = uniform(&mut rng, 0.2, 5.0);
        let ex: Vec<f64> = rs.iter().map(|r| (r / temp).exp()).collect();
        let z: f64 = ex.iter().sum();
        for (got, e) in attention_weights(&rs, temp).iter().zip(&ex) {
            w.check("attention weights", *got, e / z, 0.0);
        }
    }

    // Soft target update.
    for _ in 0..N / 20 {
        let sizes = [rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..5)];
        let online = Mlp::new(&sizes, &mut rng).unwrap();
        let old = Mlp::new(&sizes, &mut rng).unwrap();
        let tau = uniform(&mut rng, 0.0, 1.0);
        let mut target = old.clone();
        soft_update(&mut target, &online, tau).unwrap();
        for ((t, o), p) in target.params().iter().zip(online.params()).zip(old.params()) {
            let terms = [tau * o, (1.0 - tau) * p];
            w.check("soft update", *t, terms[0] + terms[1], terms[0].abs() + terms[1].abs());
        }
    }

    let worst = w.rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let fewest = w.rows.iter().map(|r| r.2).min().unwrap_or(0);
    let bad: Vec<String> = w
        .rows
        .iter()
        .filter(|r| r.1 > 1e-12)
        .map(|r| format!("{} ({:.2e})", r.0, r.1))
        .collect();
    ensure(bad.is_empty(), || format!("relative error above 1e-12: {}", bad.join(", ")))?;
    ensure(fewest >= 1000, || format!("only {fewest} inputs for some formula"))?;
    Ok(format!("{} formulas, >= {fewest} inputs each, worst relative error {worst:.1e}", w.rows.len()))
}

/// Checks one network against central differences of a random linear
/// readout. Parameters whose perturbation flips a hidden unit across the
/// ReLU kink are skipped since the derivative is not defined there.
fn mlp_gradient_check(net: &Mlp, rng: &mut ChaCha8Rng) -> Result<(usize, usize, f64), String> {
    let x: Vec<f64> = (0..net.input_dim()).map(|_| uniform(rng, -1.0, 1.0)).collect();
    let c: Vec<f64> = (0..net.output_dim()).map(|_| uniform(rng, -1.0, 1.0)).collect();
    let g = net.backward(&x, &c).map_err(|e| e.to_string())?;
    let f = |n: &Mlp| n.forward(&x).unwrap().iter().zip(&c).map(|(y, c)| y * c).sum::<f64>();
    let pattern = |n: &Mlp| hidden_signs(n, &x);
    let base = pattern(net);
    let h = 1e-5;
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut p = net.clone();
    for k in 0..net.params().len() {
        let orig = p.params()[k];
        p.params_mut()[k] = orig + h;
        let (fp, sp) = (f(&p), pattern(&p));
        p.params_mut()[k] = orig - h;
        let (fm, sm) = (f(&p), pattern(&p));
        p.params_mut()[k] = orig;
        if sp != base || sm != base {
            skipped += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        let e = (fd - g.params[k]).abs() / fd.abs().max(g.params[k].abs()).max(1e-6);
        worst = worst.max(e);
        if e > 1e-4 {
            return Err(format!("param {k}: finite difference {fd} vs backward {}", g.params[k]));
        }
        checked += 1;
    }
    Ok((checked, skipped, worst))
}

/// Sign pattern of every hidden pre-activation.
fn hidden_signs(net: &Mlp, x: &[f64]) -> Vec<bool> {
    let sizes = net.sizes().to_vec();
    let mut a = x.to_vec();
    let mut out = Vec::new();
    let mut off = 0;
    for (l, w) in sizes.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let p = &net.params()[off..off + n_in * n_out + n_out];
        let z: Vec<f64> = (0..n_out)
            .map(|o| p[n_in * n_out + o] + (0..n_in).map(|i| p[o * n_in + i] * a[i]).sum::<f64>())
            .collect();
        off += n_in * n_out + n_out;
        if l + 2 < sizes.len() {
            out.extend(z.iter().map(|v| *v > 0.0));
            a = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    out
}

fn random_experience(rng: &mut ChaCha8Rng, n: usize, obs: usize) -> Experience {
    let mut v = |len: usize| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let observations = (0..n).map(|_| v(obs)).collect();
    let next_observations = (0..n).map(|_| v(obs)).collect();
    let rewards = v(n);
    let actions = (0..n)
        .map(|k| Action::from_index((k * 5 + 1) % Action::COUNT).unwrap().one_hot())
        .collect();
    Experience {
        observations,
        actions,
        rewards,
        next_observations,
        round_index: 0,
    }
}

fn criterion_2() -> Outcome {
    let cfg = RunConfig::desk();
    let env = TrackingEnv::new(cfg.env_config()).map_err(|e| e.to_string())?;
    let n = cfg.scenario.n_auvs;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut lines = Vec::new();
    for (label, abl_no_attention) in [("attention", false), ("flat", true)] {
        let layout = CriticLayout {
            obs_dim: env.feature_dim(),
            slots: if abl_no_attention { n } else { n.min(3) },
            feature_width: if abl_no_attention { 0 } else { cfg.learner.feature_width },
        };
        let b = AgentBundle::new(&layout, cfg.learner.hidden, cfg.learner.feature_width, 1e-3, &mut rng)
            .map_err(|e| e.to_string())?;
        let nets = if abl_no_attention { vec![("critic", &b.critic)] } else { vec![("actor", &b.actor), ("critic", &b.critic), ("feature", &b.feature)] };
        for (name, net) in nets {
            let (checked, skipped, worst) = mlp_gradient_check(net, &mut rng).map_err(|e| format!("{label} {name}: {e}"))?;
            ensure(checked > 10 * skipped.max(1), || format!("{label} {name}: {skipped} of {checked} parameters at a kink"))?;
            lines.push(format!("{label}/{name} {checked} params worst {worst:.1e}"));
        }
    }

    // Actor gradient through the relaxed action on a two-agent toy.
    let layout = CriticLayout {
        obs_dim: 4,
        slots: 2,
        feature_width: 0,
    };
    let bundles: Vec<AgentBundle> = (0..2)
        .map(|_| AgentBundle::new(&layout, 8, 4, 1e-3, &mut rng).unwrap())
        .collect();
    let batch: Vec<Experience> = (0..8).map(|_| random_experience(&mut rng, 2, 4)).collect();
    let refs: Vec<&Experience> = batch.iter().collect();
    let noise = gumbel_noise(refs.len(), &mut rng);
    let mut worst = 0.0f64;
    for agent in 0..2 {
        let sel = all_agents(agent, 0, 2, true);
        let obj = |b: &AgentBundle| actor_objective(b, agent, &layout, &refs, &sel, &[], 0.7, 1e-3, &noise).unwrap();
        let g = obj(&bundles[agent]).1;
        let h = 1e-5;
        for k in 0..g.len() {
            let (mut p, mut m) = (bundles[agent].clone(), bundles[agent].clone());
            p.actor.params_mut()[k] += h;
            m.actor.params_mut()[k] -= h;
            let fd = (obj(&p).0 - obj(&m).0) / (2.0 * h);
            let e = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
            worst = worst.max(e);
            ensure(e <= 1e-3, || format!("relaxed actor gradient, agent {agent} param {k}: {fd} vs {}", g[k]))?;
        }
    }
    lines.push(format!("relaxed actor worst {worst:.1e}"));
    Ok(lines.join("; "))
}

fn brute_force_best(scores: &[Vec<f64>], lo: usize, hi: usize) -> f64 {
    let (n, t) = (scores.len(), scores[0].len());
    let mut best = f64::NEG_INFINITY;
    let mut a = vec![0usize; n];
    loop {
        let mut counts = vec![0usize; t];
        for &j in &a {
            counts[j] += 1;
        }
        if counts.iter().all(|&c| c >= lo && c <= hi) {
            let s = a.iter().enumerate().map(|(i, &j)| scores[i][j]).sum::<f64>();
            best = best.max(s);
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            a[i] += 1;
            if a[i] < t {
                break;
            }
            a[i] = 0;
            i += 1;
        }
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let t = rng.random_range(1..=n.min(4));
        let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..t).map(|_| uniform(&mut rng, -2.0, 5.0)).collect()).collect();
        let m = ScoreMatrix::from_scores(scores.clone());
        for balanced in [true, false] {
            let cfg = AssignConfig {
                balanced,
                ..AssignConfig::default()
            };
            let got = assign(&m, &cfg).map_err(|e| e.to_string())?;
            let (lo, hi) = formation_bounds(n, t, balanced);
            let want = brute_force_best(&scores, lo, hi);
            let recomputed = m.plan_score(&got.plan.assignment);
            ensure(got.plan.is_valid(), || format!("{n}x{t} balanced={balanced}: invalid plan"))?;
            ensure(recomputed == want, || {
                format!("{n}x{t} balanced={balanced}: plan scores {recomputed}, optimum {want}")
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} instances at the exhaustive optimum"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for call in 0..10_000 {
        let n = rng.random_range(3..=16);
        let round: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -3.0, 1.0)).collect();
        let best = select_best(&round);
        let i = rng.random_range(0..n);
        let s = build_selection(i, best, n, &mut rng);
        let c: BTreeSet<usize> = s.concatenated.iter().copied().collect();
        let wset: BTreeSet<usize> = s.weighted.iter().copied().collect();
        ensure(s.concatenated.len() == 3 && c.len() == 3, || format!("call {call}: concatenated {:?}", s.concatenated))?;
        ensure(s.weighted.len() == n - 3 && wset.len() == n - 3, || format!("call {call}: weighted {:?}", s.weighted))?;
        ensure(c.is_disjoint(&wset) && c.len() + wset.len() == n, || format!("call {call}: sets overlap or miss agents"))?;
        ensure(s.concatenated[0] == i && c.contains(&best), || format!("call {call}: owner or best missing"))?;

        let r: Vec<f64> = s.weighted.iter().map(|&k| round[k]).collect();
        let w = attention_weights(&r, uniform(&mut rng, 0.1, 4.0));
        if !w.is_empty() {
            let sum: f64 = w.iter().sum();
            ensure((sum - 1.0).abs() <= 1e-12, || format!("call {call}: weights sum to {sum}"))?;
            ensure(w.iter().all(|&x| x > 0.0), || format!("call {call}: non-positive weight"))?;
            for a in 0..r.len() {
                for b in 0..r.len() {
                    ensure(r[a] <= r[b] || w[a] >= w[b], || format!("call {call}: weights not rank-monotone"))?;
                }
            }
        }

        let mut buf = ReplayBuffer::new(64).unwrap();
        for _ in 0..rng.random_range(8..64) {
            let v = uniform(&mut rng, -2.0, 2.0);
            buf.push(Experience {
                observations: vec![vec![0.0]],
                actions: vec![[0.0; 7]],
                rewards: vec![(v * 4.0).round() / 4.0],
                next_observations: vec![vec![0.0]],
                round_index: 0,
            })
            .unwrap();
        }
        let batch = rng.random_range(1..=buf.len());
        let d = resample(&buf, batch, batch, &mut rng).ok_or("buffer below threshold")?;
        let d2: BTreeSet<usize> = d.d2.iter().copied().collect();
        ensure(d.d2.len() == batch.div_ceil(2) && d2.iter().all(|k| d.d1.contains(k)), || {
            format!("call {call}: D2 not the top half of D1")
        })?;
        let min_d2 = d.d2.iter().map(|&k| buf.get(k).mean_reward()).fold(f64::INFINITY, f64::min);
        let max_rest = d
            .d1
            .iter()
            .filter(|k| !d2.contains(k))
            .map(|&k| buf.get(k).mean_reward())
            .fold(f64::NEG_INFINITY, f64::max);
        ensure(min_d2 >= max_rest, || format!("call {call}: min D2 {min_d2} < max rest {max_rest}"))?;
    }
    Ok("10000 calls: cardinalities, weight sums, rank order and resampling dominance hold".into())
}

fn random_field(rng: &mut ChaCha8Rng) -> FlowField {
    FlowField {
        background: rand_vec(rng, 0.3),
        modes: (0..rng.random_range(1..5))
            .map(|_| FlowMode {
                amplitude: rand_vec(rng, 0.3),
                wavevector: rand_vec(rng, 0.02),
                angular_frequency: uniform(rng, 0.0, 1.0),
                phase: uniform(rng, 0.0, 6.3),
            })
            .collect(),
    }
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_fd = 0.0f64;
    for s in 0..1000 {
        let field = random_field(&mut rng);
        let p = rand_vec(&mut rng, 1000.0);
        let t = uniform(&mut rng, 0.0, 600.0);
        let h = 1e-4;
        let fd = (field.velocity_at(&p, t + h) - field.velocity_at(&p, t - h)) / (2.0 * h);
        let an = field.velocity_time_derivative(&p, t);
        // Error is measured against the size of the field's time variation
        // so that samples where ∂u/∂t happens to vanish stay meaningful.
        let scale: f64 = field.modes.iter().map(|m| m.amplitude.norm() * m.angular_frequency).sum();
        let e = (fd - an).norm() / an.norm().max(fd.norm()).max(1e-3 * scale).max(f64::MIN_POSITIVE);
        worst_fd = worst_fd.max(e);
        ensure(e <= 1e-6, || format!("sample {s}: ∂u/∂t {an:?} vs finite difference {fd:?}"))?;
    }

    let fp = FluidParams::default();
    for _ in 0..1000 {
        let field = random_field(&mut rng);
        let p = rand_vec(&mut rng, 1000.0);
        let t = uniform(&mut rng, 0.0, 600.0);
        let riding = net_current_force(&field, &fp, &p, &field.velocity_at(&p, t), t);
        ensure(riding.drag == Vec3::zeros() && riding.lift == Vec3::zeros(), || "non-zero force at zero relative flow".into())?;
        ensure(riding.net == riding.virtual_mass, || "net differs from virtual mass at zero relative flow".into())?;
        let still = net_current_force(&FlowField::still(), &fp, &p, &Vec3::zeros(), t);
        ensure(still.net == Vec3::zeros() && still.virtual_mass == Vec3::zeros(), || "force in still water".into())?;
    }

    // One integration step against an independent re-implementation.
    let cfg = RunConfig::desk().env_config();
    let env = TrackingEnv::new(cfg.clone()).map_err(|e| e.to_string())?;
    let ph = &cfg.physics;
    let f = &cfg.fluid;
    let mut worst_step = 0.0f64;
    for s in 0..200u64 {
        let mut world = env.reset_seeded(s);
        for a in world.auvs.iter_mut() {
            a.velocity = rand_vec(&mut rng, 1.5);
            a.battery = if rng.random_bool(0.1) { 0.5 } else { a.battery };
        }
        world.time = uniform(&mut rng, 0.0, 100.0);
        let actions: Vec<Action> = (0..world.auvs.len()).map(|_| Action::ALL[rng.random_range(0..7)]).collect();
        let mut r1 = ChaCha8Rng::seed_from_u64(1000 + s);
        let mut r2 = r1.clone();
        let (next, out) = env.step(&world, &actions, &mut r1).map_err(|e| e.to_string())?;

        for (i, a) in world.auvs.iter().enumerate() {
            let moving = actions[i] != Action::Stay && a.battery >= ph.move_cost;
            let mut force = if moving { action_to_thrust(actions[i], ph.thrust) } else { Vec3::zeros() };
            let u = cfg.flow.velocity_at(&a.position, world.time) - a.velocity;
            let sp = u.norm();
            let q = 0.5 * f.rho * sp * sp * f.frontal_area;
            if sp > 0.0 {
                force += u / sp * (q * f.c_d);
                let up = Vec3::z() - u / sp * (u.z / sp);
                if up.norm() >= 1e-12 {
                    force += up / up.norm() * (q * f.c_l);
                }
            }
            force += cfg.flow.velocity_time_derivative(&a.position, world.time) * (f.rho * f.c_vm * f.volume);
            let v = a.velocity * (1.0 - ph.damping) + force / a.mass * ph.dt;
            let p = a.position + v * ph.dt;
            let b = if moving { a.battery - ph.move_cost } else { a.battery };
            let e1 = (next.auvs[i].velocity - v).norm() / v.norm().max(1e-300);
            let e2 = (next.auvs[i].position - p).norm() / p.norm();
            worst_step = worst_step.max(e1).max(e2);
            ensure(e1 <= 1e-12 && e2 <= 1e-12, || format!("world {s} vehicle {i}: step mismatch {e1:.1e} {e2:.1e}"))?;
            ensure(next.auvs[i].battery == b, || format!("world {s} vehicle {i}: battery"))?;
            ensure(out.info.energy_spent[i] == if moving { ph.move_cost } else { 0.0 }, || "energy bookkeeping".into())?;
        }
        for (j, t) in world.targets.iter().enumerate() {
            let xi: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut r2));
            let decay = (-ph.target_ou_theta * ph.dt).exp();
            let mut v = t.mean_velocity + (t.velocity - t.mean_velocity) * decay + Vec3::from(xi) * (ph.target_ou_sigma * ph.dt.sqrt());
            if v.norm() > t.max_speed {
                v = v / v.norm() * t.max_speed;
            }
            let p = t.position + v * ph.dt;
            let e = (next.targets[j].position - p).norm() / p.norm().max(1.0);
            worst_step = worst_step.max(e);
            ensure(e <= 1e-12, || format!("world {s} target {j}: step mismatch {e:.1e}"))?;
        }
    }
    Ok(format!(
        "∂u/∂t worst {worst_fd:.1e} over 1000 samples; zero-flow forces exact; one-step worst {worst_step:.1e}"
    ))
}

struct Learned {
    full: Vec<Vec<EpisodeLog>>,
    unshaped: Vec<Vec<EpisodeLog>>,
    policy: Vec<dsbm_core::nn::Mlp>,
    secs: f64,
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const WINDOW: usize = 20;

fn desk_run(seed: u64, no_reshaping: bool) -> (Vec<EpisodeLog>, Learner) {
    let mut cfg = RunConfig::desk();
    cfg.learner.seed = seed;
    cfg.ablations.no_reshaping = no_reshaping;
    let env = TrackingEnv::new(cfg.env_config()).unwrap();
    let mut learner = Learner::new(cfg.learner.clone(), cfg.ablations, cfg.scenario.n_auvs, env.feature_dim()).unwrap();
    let mut planner = AsmaPlanner {
        profiles: cfg.profiles().unwrap(),
        config: cfg.asma.clone(),
    };
    let logs = train(&env, &mut learner, &mut planner, |_| Ok(())).unwrap();
    (logs, learner)
}

fn learn() -> Learned {
    let t0 = Instant::now();
    let mut full = Vec::new();
    let mut unshaped = Vec::new();
    let mut policy = Vec::new();
    for &s in &SEEDS {
        let (logs, l) = desk_run(s, false);
        if s == SEEDS[0] {
            policy = l.actors();
        }
        full.push(logs);
        unshaped.push(desk_run(s, true).0);
    }
    Learned {
        full,
        unshaped,
        policy,
        secs: t0.elapsed().as_secs_f64(),
    }
}

/// Trailing means over `WINDOW` episodes of the unshaped reward.
fn smoothed(logs: &[EpisodeLog]) -> Vec<f64> {
    (WINDOW..=logs.len())
        .map(|end| logs[end - WINDOW..end].iter().map(|e| e.mean_reward).sum::<f64>() / WINDOW as f64)
        .collect()
}

fn mean_curve(runs: &[Vec<EpisodeLog>]) -> Vec<f64> {
    let curves: Vec<Vec<f64>> = runs.iter().map(|r| smoothed(r)).collect();
    (0..curves[0].len())
        .map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / curves.len() as f64)
        .collect()
}

fn criterion_6(l: &Learned) -> Outcome {
    let curve = mean_curve(&l.full);
    let first = l.full.iter().map(|r| r[0].mean_reward).sum::<f64>() / l.full.len() as f64;
    let last = *curve.last().unwrap();
    let best = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let progress = if best > first { (last - first) / (best - first) } else { 0.0 };
    let wins = l
        .full
        .iter()
        .zip(&l.unshaped)
        .filter(|(f, u)| smoothed(f).last() > smoothed(u).last())
        .count();
    let per_seed: Vec<String> = l
        .full
        .iter()
        .zip(&l.unshaped)
        .map(|(f, u)| format!("{:.3}/{:.3}", smoothed(f).last().unwrap(), smoothed(u).last().unwrap()))
        .collect();
    let summary = format!(
        "episode 1 {first:.3}, final {last:.3}, best {best:.3}, progress {:.0}%; full/unshaped per seed {}; full ahead on {wins}/5; {:.0} s",
        100.0 * progress,
        per_seed.join(" "),
        l.secs
    );
    ensure(progress >= 0.5 && wins >= 4, || summary.clone())?;
    Ok(summary)
}

fn criterion_7(l: &Learned) -> Outcome {
    let cfg = RunConfig::desk();
    let env = TrackingEnv::new(cfg.env_config()).map_err(|e| e.to_string())?;
    let seeds = cfg.eval_seeds();
    let mut planner = AsmaPlanner {
        profiles: cfg.profiles().map_err(|e| e.to_string())?,
        config: cfg.asma.clone(),
    };
    let trained = evaluate(&env, &mut GreedyPolicy { actors: l.policy.clone() }, &mut planner, &seeds, false)
        .map_err(|e| e.to_string())?
        .report;
    let random = evaluate(&env, &mut RandomPolicy::new(cfg.run.eval_seed), &mut planner, &seeds, false)
        .map_err(|e| e.to_string())?
        .report;
    let summary = format!(
        "trained accuracy {:.4}, random {:.4}, ratio {:.2} over {} episodes",
        trained.accuracy,
        random.accuracy,
        trained.accuracy / random.accuracy.max(f64::MIN_POSITIVE),
        seeds.len()
    );
    ensure(trained.accuracy > 0.0 && trained.accuracy >= 3.0 * random.accuracy, || summary.clone())?;
    Ok(summary)
}

fn criterion_8(l: &Learned) -> Outcome {
    // Fixture: a 12-vehicle fleet, so nine agents sit in the weighted set.
    let mut cfg = RunConfig::desk();
    cfg.scenario.n_auvs = 12;
    cfg.scenario.n_targets = 4;
    cfg.scenario.episode_length = 60;
    cfg.learner.seed = 8;
    let env = TrackingEnv::new(cfg.env_config()).map_err(|e| e.to_string())?;
    let mut learner = Learner::new(cfg.learner.clone(), cfg.ablations, 12, env.feature_dim()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut policy = RandomPolicy::new(8);
    let mut sums = vec![0.0; 12];
    for ep in 0..5u64 {
        let mut world = env.reset_seeded(800 + ep);
        let plan: Vec<usize> = (0..12).map(|i| i % 4).collect();
        world.set_formations(&plan).map_err(|e| e.to_string())?;
        let (_, mut features) = env.observe(&world);
        while !env.episode_done(&world) {
            let actions = dsbm_core::metrics::Policy::act(&mut policy, &world, &features).map_err(|e| e.to_string())?;
            let (next, out) = env.step(&world, &actions, &mut rng).map_err(|e| e.to_string())?;
            for (s, r) in sums.iter_mut().zip(&out.shaped_rewards) {
                *s += r;
            }
            learner
                .buffer
                .push(Experience {
                    observations: std::mem::replace(&mut features, out.features.clone()),
                    actions: actions.iter().map(|a| a.one_hot()).collect(),
                    rewards: out.shaped_rewards,
                    next_observations: out.features,
                    round_index: ep as usize,
                })
                .map_err(|e| e.to_string())?;
            world = next;
        }
    }
    learner.round_rewards = sums.iter().map(|s| s / learner.buffer.len() as f64).collect();
    let draw = resample(&learner.buffer, 128, 128, &mut rng).ok_or("buffer below batch size")?;
    let ctx = learner.update_context();
    let batch: Vec<&Experience> = draw.d1.iter().map(|&i| learner.buffer.get(i)).collect();
    let g = cfg.learner.gamma;
    let ranked = target_variance(&learner.bundles, &learner.layout, &batch, &ctx, g).map_err(|e| e.to_string())?;
    let even = target_variance(&learner.bundles, &learner.layout, &batch, &ctx.uniform(), g).map_err(|e| e.to_string())?;

    // How far the ranked weights are from even at all.
    let spread = ctx
        .weights
        .iter()
        .flat_map(|w| w.iter().map(move |x| (x * w.len() as f64 - 1.0).abs()))
        .fold(0.0, f64::max);

    // Logged, not asserted: the training runs of the learning check. Their
    // 4-vehicle fleets have one weighted member, so the two always agree.
    let logged: Vec<(f64, f64)> = l
        .full
        .iter()
        .flatten()
        .filter_map(|e| Some((e.target_variance_ranked?, e.target_variance_uniform?)))
        .collect();
    let same = logged.iter().filter(|(r, u)| r == u).count();
    let summary = format!(
        "fixture variance ranked {ranked:.6e} vs uniform {even:.6e} (largest weight {:.2}% off even); \
         4-vehicle training logs identical on {same}/{} episodes",
        100.0 * spread,
        logged.len()
    );
    ensure(ranked <= even, || summary.clone())?;
    Ok(summary)
}

fn criterion_9() -> Outcome {
    let cfg = ProtocolConfig {
        local_controllers: 2,
        executors: 12,
        targets: 4,
        rounds: 100,
        loss: 0.3,
        seed: 9,
        ..ProtocolConfig::default()
    };
    let env_cfg = RunConfig::desk().env_config();
    let run = || {
        let mut planner = AsmaPlanner {
            profiles: asma::default_profiles(12),
            config: AssignConfig::default(),
        };
        run_protocol(&cfg, &env_cfg, |w| dsbm_core::learner::PlanProvider::plan(&mut planner, w))
    };
    let a = run().map_err(|e| e.to_string())?;
    let b = run().map_err(|e| e.to_string())?;
    let bad = a.rounds.iter().find(|r| !(r.coverage && r.freshness && r.causality));
    ensure(bad.is_none(), || format!("invariant broken in round {:?}", bad.map(|r| r.round)))?;
    ensure(a.rounds.len() == 100, || "wrong round count".into())?;
    let (ta, tb) = (a.trace_jsonl().map_err(|e| e.to_string())?, b.trace_jsonl().map_err(|e| e.to_string())?);
    ensure(ta == tb, || "trace replay differs".into())?;
    let lost = a.trace.iter().filter(|r| !r.delivered).count();
    let stale_rounds = a.rounds.iter().filter(|r| !r.stale.is_empty()).count();
    Ok(format!(
        "100 rounds, {} messages, {lost} lost, {stale_rounds} rounds with stale entries; invariants hold; replay identical ({} bytes)",
        a.trace.len(),
        ta.len()
    ))
}

fn criterion_10(l: &Learned) -> Outcome {
    let cfg = RunConfig::desk();
    let env = TrackingEnv::new(cfg.env_config()).map_err(|e| e.to_string())?;
    let seeds: Vec<u64> = (0..5).map(|k| 500 + k).collect();
    let mut planner = AsmaPlanner {
        profiles: cfg.profiles().map_err(|e| e.to_string())?,
        config: cfg.asma.clone(),
    };
    let stay = evaluate(&env, &mut StayPolicy, &mut planner, &seeds, false).map_err(|e| e.to_string())?.report;
    ensure(stay.energy_curve.iter().all(|&e| e == 0.0), || "stay-only rollout consumed energy".into())?;
    let full_battery = cfg.physics.initial_battery;
    ensure(stay.battery_curve.iter().all(|&b| b == full_battery), || "stay-only rollout drained the battery".into())?;

    let mut reports = vec![stay];
    reports.push(evaluate(&env, &mut RandomPolicy::new(10), &mut planner, &seeds, false).map_err(|e| e.to_string())?.report);
    reports.push(
        evaluate(&env, &mut GreedyPolicy { actors: l.policy.clone() }, &mut planner, &seeds, false)
            .map_err(|e| e.to_string())?
            .report,
    );
    // Fleets of 12 in formations of 3 exercise all three consistency classes.
    let mut big = cfg.clone();
    big.scenario.n_auvs = 12;
    big.scenario.n_targets = 4;
    big.scenario.episode_length = 50;
    let big_env = TrackingEnv::new(big.env_config()).map_err(|e| e.to_string())?;
    let mut big_planner = AsmaPlanner {
        profiles: asma::default_profiles(12),
        config: AssignConfig::default(),
    };
    reports.push(evaluate(&big_env, &mut RandomPolicy::new(11), &mut big_planner, &seeds, false).map_err(|e| e.to_string())?.report);

    for (k, r) in reports.iter().enumerate() {
        if let Some(c) = r.consistency {
            let s = c.all_different + c.two_alike + c.all_alike;
            ensure((s - 1.0).abs() <= 1e-9, || format!("report {k}: consistency fractions sum to {s}"))?;
        }
        ensure(r.battery_curve.windows(2).all(|w| w[1] <= w[0]), || format!("report {k}: battery rose"))?;
        ensure(r.energy_curve.windows(2).all(|w| w[1] >= w[0]), || format!("report {k}: cumulative energy fell"))?;
        ensure((0.0..=1.0).contains(&r.accuracy), || format!("report {k}: accuracy outside [0, 1]"))?;
    }
    let c = reports[3].consistency.ok_or("no formations of size 3 in the 12-vehicle run")?;
    Ok(format!(
        "stay rollouts spend 0 energy; battery monotone in {} reports; 12-vehicle consistency {:.3}/{:.3}/{:.3}",
        reports.len(),
        c.all_different,
        c.two_alike,
        c.all_alike
    ))
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let out = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = t0.elapsed().as_secs_f64();
    let (tag, detail, ok) = match out {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("criterion {n:>2} {tag} {name} [{secs:.1} s]: {detail}");
    ok
}

fn main() {
    let picked: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| picked.is_empty() || picked.contains(&n);
    let mut ok = true;
    if want(1) {
        ok &= run(1, "formula oracles", criterion_1);
    }
    if want(2) {
        ok &= run(2, "gradient correctness", criterion_2);
    }
    if want(3) {
        ok &= run(3, "assignment optimality", criterion_3);
    }
    if want(4) {
        ok &= run(4, "dynamic-switching structure", criterion_4);
    }
    if want(5) {
        ok &= run(5, "physics consistency", criterion_5);
    }
    if want(9) {
        ok &= run(9, "protocol properties", criterion_9);
    }
    if [6, 7, 8, 10].iter().any(|&n| want(n)) {
        let t0 = Instant::now();
        let learned = panic::catch_unwind(learn);
        println!("trained 5 seeds x (full, no-reshaping) in {:.0} s", t0.elapsed().as_secs_f64());
        match learned {
            Ok(l) => {
                if want(6) {
                    ok &= run(6, "desk-scale learning", || criterion_6(&l));
                }
                if want(7) {
                    ok &= run(7, "tracking quality", || criterion_7(&l));
                }
                if want(8) {
                    ok &= run(8, "variance mechanism", || criterion_8(&l));
                }
                if want(10) {
                    ok &= run(10, "metric bookkeeping", || criterion_10(&l));
                }
            }
            Err(_) => {
                for (n, name) in [(6, "desk-scale learning"), (7, "tracking quality"), (8, "variance mechanism"), (10, "metric bookkeeping")] {
                    if want(n) {
                        println!("criterion {n:>2} FAIL {name}: training panicked");
                    }
                }
                ok = false;
            }
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
