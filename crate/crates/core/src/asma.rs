//! Fuzzy-logic vehicle scoring and formation assignment.
//!
//! Raw performance metrics of each vehicle are mapped onto `[0, 1]`
//! memberships, six expert rules turn memberships and vehicle–target range
//! into a score `S[i][j]`, and the assignment step picks the plan with the
//! largest cumulative score such that every vehicle joins exactly one
//! formation and every target is covered.
//!
//! Small instances are solved exhaustively (lexicographically first optimum
//! wins ties); larger ones use greedy seeding followed by steepest-ascent
//! local search over single moves and pairwise swaps.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::env::WorldState;
use crate::error::{contract, Error, Result};

/// Normalization bounds of one raw metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRange {
    pub min: f64,
    pub max: f64,
}

impl MetricRange {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn membership(&self, x: f64) -> Result<f64> {
        membership(x, self.min, self.max)
    }
}

/// Raw capability metrics of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuvProfile {
    pub speed: f64,
    pub acceleration: f64,
    pub battery: f64,
    pub capacity: f64,
    pub energy_rate: f64,
    /// Perception range, m.
    pub perception_range: f64,
    pub speed_range: MetricRange,
    pub acceleration_range: MetricRange,
    pub battery_range: MetricRange,
    pub capacity_range: MetricRange,
    pub energy_rate_range: MetricRange,
}

impl AuvProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("speed", self.speed_range),
            ("acceleration", self.acceleration_range),
            ("battery", self.battery_range),
            ("capacity", self.capacity_range),
            ("energy_rate", self.energy_rate_range),
        ] {
            if !(r.max > r.min) {
                return Err(Error::Config(format!(
                    "profile metric {name}: range_max must exceed range_min"
                )));
            }
        }
        if !(self.perception_range > 0.0) {
            return Err(Error::Config("perception_range must be > 0".into()));
        }
        Ok(())
    }

    pub fn memberships(&self) -> Result<MembershipVector> {
        Ok(MembershipVector {
            speed: self.speed_range.membership(self.speed)?,
            acceleration: self.acceleration_range.membership(self.acceleration)?,
            battery: self.battery_range.membership(self.battery)?,
            capacity: self.capacity_range.membership(self.capacity)?,
            energy_rate: self.energy_rate_range.membership(self.energy_rate)?,
        })
    }
}

/// Membership degrees of the five scored metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembershipVector {
    pub speed: f64,
    pub acceleration: f64,
    pub battery: f64,
    pub capacity: f64,
    pub energy_rate: f64,
}

/// Piecewise-linear membership degree of `x` in `[range_min, range_max]`.
pub fn membership(x: f64, range_min: f64, range_max: f64) -> Result<f64> {
    if !(range_max > range_min) {
        return Err(contract(format!(
            "degenerate membership range [{range_min}, {range_max}]"
        )));
    }
    Ok(if x < range_min {
        0.0
    } else if x > range_max {
        1.0
    } else {
        (x - range_min) / (range_max - range_min)
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The six rule contributions, in rule order: energy regulation, load
/// balancing, comprehensive performance, dynamic counter-reaction, fine
/// operation and remote rapid response.
pub fn rule_contributions(m: &MembershipVector, d_ij: f64, perception_range: f64) -> [f64; 6] {
    let (v, a, b, k, e) = (m.speed, m.acceleration, m.battery, m.capacity, m.energy_rate);
    let rel = d_ij / perception_range;
    [
        (v.powi(3) + 2.0 * a * a) * sigmoid(b) * (1.0 - rel),
        (e - k).cosh() * (k - e).abs().sqrt(),
        (v * v + a * a + e * e) / 3.0,
        1.0 / (1.0 + (a - v).exp()),
        if v <= 0.3 { v * k } else { 0.0 },
        if v >= 0.7 { v * b * rel } else { 0.0 },
    ]
}

/// Score `S[i][j]` of a vehicle with memberships `m` for a target at `d_ij`.
pub fn rule_scores(m: &MembershipVector, d_ij: f64, perception_range: f64) -> f64 {
    rule_contributions(m, d_ij, perception_range).iter().sum()
}

/// Scores and ranges of every vehicle–target pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub scores: Vec<Vec<f64>>,
    pub distances: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    /// Wraps a bare score table (distances left empty).
    pub fn from_scores(scores: Vec<Vec<f64>>) -> Self {
        Self {
            distances: Vec::new(),
            scores,
        }
    }

    pub fn n_auvs(&self) -> usize {
        self.scores.len()
    }

    pub fn n_targets(&self) -> usize {
        self.scores.first().map_or(0, Vec::len)
    }

    /// Cumulative score of an assignment, summed in vehicle order.
    pub fn plan_score(&self, assignment: &[usize]) -> f64 {
        assignment
            .iter()
            .enumerate()
            .fold(0.0, |acc, (i, &j)| acc + self.scores[i][j])
    }
}

pub fn score_matrix(profiles: &[AuvProfile], world: &WorldState) -> Result<ScoreMatrix> {
    if profiles.len() != world.auvs.len() {
        return Err(contract(format!(
            "{} profiles for a fleet of {}",
            profiles.len(),
            world.auvs.len()
        )));
    }
    let mut scores = Vec::with_capacity(profiles.len());
    let mut distances = Vec::with_capacity(profiles.len());
    for (i, profile) in profiles.iter().enumerate() {
        let m = profile.memberships()?;
        let d: Vec<f64> = (0..world.targets.len()).map(|j| world.distance(i, j)).collect();
        scores.push(
            d.iter()
                .map(|&dij| rule_scores(&m, dij, profile.perception_range))
                .collect(),
        );
        distances.push(d);
    }
    Ok(ScoreMatrix { scores, distances })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignConfig {
    /// Keep formation sizes within one of each other.
    pub balanced: bool,
    /// Largest feasible-plan count solved by enumeration.
    pub exhaustive_limit: u64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self {
            balanced: true,
            exhaustive_limit: 1_000_000,
        }
    }
}

/// Vehicle-to-target assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormationPlan {
    /// Target index of each vehicle.
    pub assignment: Vec<usize>,
    /// Members of each target's formation, ascending.
    pub formations: Vec<Vec<usize>>,
}

impl FormationPlan {
    pub fn from_assignment(assignment: Vec<usize>, n_targets: usize) -> Self {
        let mut formations = vec![Vec::new(); n_targets];
        for (i, &j) in assignment.iter().enumerate() {
            formations[j].push(i);
        }
        Self {
            assignment,
            formations,
        }
    }

    /// Every vehicle assigned to a valid target and every target covered.
    pub fn is_valid(&self) -> bool {
        let n_targets = self.formations.len();
        self.assignment.iter().all(|&j| j < n_targets)
            && self.formations.iter().all(|f| !f.is_empty())
            && self.formations.iter().map(Vec::len).sum::<usize>() == self.assignment.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Exhaustive,
    LocalSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub plan: FormationPlan,
    pub score: f64,
    pub method: SolveMethod,
    /// Another plan reaches the same score (exhaustive), or a score-neutral
    /// move exists at the local optimum (local search).
    pub tied: bool,
}

/// Size bounds per target for a fleet of `n_auvs`.
pub fn formation_bounds(n_auvs: usize, n_targets: usize, balanced: bool) -> (usize, usize) {
    if balanced {
        (n_auvs / n_targets, n_auvs.div_ceil(n_targets))
    } else {
        (1, n_auvs + 1 - n_targets)
    }
}

pub fn assign(matrix: &ScoreMatrix, cfg: &AssignConfig) -> Result<Assignment> {
    let (n, t) = (matrix.n_auvs(), matrix.n_targets());
    if t == 0 || n < t {
        return Err(contract(format!("cannot cover {t} targets with {n} vehicles")));
    }
    if matrix.scores.iter().any(|row| row.len() != t) {
        return Err(contract("ragged score matrix"));
    }
    let (lo, hi) = formation_bounds(n, t, cfg.balanced);
    let (assignment, score, method, tied) = solve_bounded(&matrix.scores, lo, hi, cfg.exhaustive_limit);
    Ok(Assignment {
        plan: FormationPlan::from_assignment(assignment, t),
        score,
        method,
        tied,
    })
}

/// Number of ways to place `n` labelled items into `t` bins whose sizes lie
/// in `[lo, hi]`, saturating at `u128::MAX`.
pub fn count_feasible(n: usize, t: usize, lo: usize, hi: usize) -> u128 {
    let mut binom = vec![vec![0u128; n + 1]; n + 1];
    for a in 0..=n {
        binom[a][0] = 1;
        for b in 1..=a {
            binom[a][b] = binom[a - 1][b - 1].saturating_add(binom[a - 1][b]);
        }
    }
    let mut ways = vec![0u128; n + 1];
    ways[0] = 1;
    for _ in 0..t {
        let mut next = vec![0u128; n + 1];
        for (k, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for s in lo..=hi.min(n - k) {
                next[k + s] = next[k + s].saturating_add(w.saturating_mul(binom[n - k][s]));
            }
        }
        ways = next;
    }
    ways[n]
}

fn tie_tol(x: f64) -> f64 {
    1e-12 * x.abs().max(1.0)
}

/// Maximizes `Σ scores[i][assignment[i]]` with every bin size in `[lo, hi]`.
pub(crate) fn solve_bounded(
    scores: &[Vec<f64>],
    lo: usize,
    hi: usize,
    exhaustive_limit: u64,
) -> (Vec<usize>, f64, SolveMethod, bool) {
    let n = scores.len();
    let t = scores.first().map_or(0, Vec::len);
    if count_feasible(n, t, lo, hi) <= exhaustive_limit as u128 {
        let (a, s, tied) = exhaustive(scores, lo, hi);
        (a, s, SolveMethod::Exhaustive, tied)
    } else {
        let (a, s, tied) = local_search(scores, lo, hi);
        (a, s, SolveMethod::LocalSearch, tied)
    }
}

struct Enumerator<'a> {
    scores: &'a [Vec<f64>],
    lo: usize,
    hi: usize,
    counts: Vec<usize>,
    current: Vec<usize>,
    best: Option<(Vec<usize>, f64)>,
    tied: bool,
}

impl Enumerator<'_> {
    fn deficit(&self) -> usize {
        self.counts.iter().map(|&c| self.lo.saturating_sub(c)).sum()
    }

    fn visit(&mut self, i: usize, partial: f64) {
        let n = self.scores.len();
        if i == n {
            match &self.best {
                Some((_, b)) if partial <= *b => {
                    if (partial - b).abs() <= tie_tol(*b) {
                        self.tied = true;
                    }
                }
                Some((_, b)) => {
                    self.tied = (partial - b).abs() <= tie_tol(partial);
                    self.best = Some((self.current.clone(), partial));
                }
                None => self.best = Some((self.current.clone(), partial)),
            }
            return;
        }
        for j in 0..self.counts.len() {
            if self.counts[j] >= self.hi {
                continue;
            }
            self.counts[j] += 1;
            if self.deficit() <= n - i - 1 {
                self.current.push(j);
                self.visit(i + 1, partial + self.scores[i][j]);
                self.current.pop();
            }
            self.counts[j] -= 1;
        }
    }
}

fn exhaustive(scores: &[Vec<f64>], lo: usize, hi: usize) -> (Vec<usize>, f64, bool) {
    let t = scores.first().map_or(0, Vec::len);
    let mut e = Enumerator {
        scores,
        lo,
        hi,
        counts: vec![0; t],
        current: Vec::with_capacity(scores.len()),
        best: None,
        tied: false,
    };
    e.visit(0, 0.0);
    let (a, s) = e.best.expect("feasible space is non-empty");
    (a, s, e.tied)
}

fn greedy_seed(scores: &[Vec<f64>], lo: usize, hi: usize) -> Vec<usize> {
    let n = scores.len();
    let t = scores.first().map_or(0, Vec::len);
    let mut assignment = vec![usize::MAX; n];
    let mut counts = vec![0usize; t];
    // Round-robin: each target claims its best unclaimed vehicle until full to `lo`.
    for _ in 0..lo {
        for j in 0..t {
            let best = (0..n)
                .filter(|&i| assignment[i] == usize::MAX)
                .max_by(|&a, &b| scores[a][j].total_cmp(&scores[b][j]).then(b.cmp(&a)));
            if let Some(i) = best {
                assignment[i] = j;
                counts[j] += 1;
            }
        }
    }
    for i in 0..n {
        if assignment[i] != usize::MAX {
            continue;
        }
        let j = (0..t)
            .filter(|&j| counts[j] < hi)
            .max_by(|&a, &b| scores[i][a].total_cmp(&scores[i][b]).then(b.cmp(&a)))
            .expect("capacity remains for every vehicle");
        assignment[i] = j;
        counts[j] += 1;
    }
    assignment
}

fn local_search(scores: &[Vec<f64>], lo: usize, hi: usize) -> (Vec<usize>, f64, bool) {
    let n = scores.len();
    let t = scores.first().map_or(0, Vec::len);
    let mut a = greedy_seed(scores, lo, hi);
    let mut counts = vec![0usize; t];
    for &j in &a {
        counts[j] += 1;
    }
    loop {
        let current: f64 = (0..n).map(|i| scores[i][a[i]]).sum();
        let tol = tie_tol(current);
        // (delta, vehicle, target, swap partner)
        let mut best: Option<(f64, usize, usize, Option<usize>)> = None;
        let mut neutral = false;
        let mut consider = |delta: f64, mv: (usize, usize, Option<usize>)| {
            if delta.abs() <= tol {
                neutral = true;
            }
            if delta > tol && best.is_none_or(|b| delta > b.0) {
                best = Some((delta, mv.0, mv.1, mv.2));
            }
        };
        for i in 0..n {
            for j in 0..t {
                if j == a[i] || counts[j] >= hi || counts[a[i]] <= lo {
                    continue;
                }
                consider(scores[i][j] - scores[i][a[i]], (i, j, None));
            }
        }
        for i in 0..n {
            for k in (i + 1)..n {
                if a[i] == a[k] {
                    continue;
                }
                let delta = scores[i][a[k]] + scores[k][a[i]] - scores[i][a[i]] - scores[k][a[k]];
                consider(delta, (i, a[k], Some(k)));
            }
        }
        match best {
            None => {
                let score = (0..n).fold(0.0, |acc, i| acc + scores[i][a[i]]);
                return (a, score, neutral);
            }
            Some((_, i, j, None)) => {
                counts[a[i]] -= 1;
                counts[j] += 1;
                a[i] = j;
            }
            Some((_, i, _, Some(k))) => a.swap(i, k),
        }
    }
}

/// Flat CSV row of a fleet profile table.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProfileRow {
    speed: f64,
    speed_min: f64,
    speed_max: f64,
    acceleration: f64,
    acceleration_min: f64,
    acceleration_max: f64,
    battery: f64,
    battery_min: f64,
    battery_max: f64,
    capacity: f64,
    capacity_min: f64,
    capacity_max: f64,
    energy_rate: f64,
    energy_rate_min: f64,
    energy_rate_max: f64,
    perception_range: f64,
}

/// Reads one profile per CSV row. Columns (header required): `speed,
/// speed_min, speed_max`, likewise for `acceleration`, `battery`,
/// `capacity`, `energy_rate`, then `perception_range`. Extra columns such as
/// an `id` are ignored.
pub fn read_profiles<R: Read>(reader: R) -> Result<Vec<AuvProfile>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<ProfileRow>().enumerate() {
        let r = row.map_err(|e| Error::Parse(format!("profile row {}: {e}", line + 1)))?;
        let p = AuvProfile {
            speed: r.speed,
            acceleration: r.acceleration,
            battery: r.battery,
            capacity: r.capacity,
            energy_rate: r.energy_rate,
            perception_range: r.perception_range,
            speed_range: MetricRange::new(r.speed_min, r.speed_max),
            acceleration_range: MetricRange::new(r.acceleration_min, r.acceleration_max),
            battery_range: MetricRange::new(r.battery_min, r.battery_max),
            capacity_range: MetricRange::new(r.capacity_min, r.capacity_max),
            energy_rate_range: MetricRange::new(r.energy_rate_min, r.energy_rate_max),
        };
        p.validate()?;
        out.push(p);
    }
    Ok(out)
}

/// Deterministic heterogeneous fleet used when no profile table is given.
pub fn default_profiles(n: usize) -> Vec<AuvProfile> {
    (0..n)
        .map(|i| {
            // Golden-ratio stride spreads metrics without an RNG.
            let u = |k: f64| ((i as f64 + 1.0) * 0.618_033_988_75 * k).fract();
            AuvProfile {
                speed: 1.0 + 2.0 * u(1.0),
                acceleration: 0.2 + 0.8 * u(2.0),
                battery: 600.0 + 400.0 * u(3.0),
                capacity: 5.0 + 15.0 * u(5.0),
                energy_rate: 0.5 + 1.5 * u(7.0),
                perception_range: 1500.0,
                speed_range: MetricRange::new(0.5, 3.0),
                acceleration_range: MetricRange::new(0.0, 1.0),
                battery_range: MetricRange::new(0.0, 1000.0),
                capacity_range: MetricRange::new(0.0, 20.0),
                energy_rate_range: MetricRange::new(0.0, 2.0),
            }
        })
        .collect()
}
