//! Tabular gridworld testbed with exact oracles.
//!
//! A 16x16 grid with random walls, five actions, deterministic motion and a
//! shortest-path-shaped reward. States carry smoothed random observation
//! vectors. Exact value iteration, exact policy evaluation and Monte-Carlo
//! rollouts provide the ground truth that learned features are judged
//! against.

use crate::linalg::{solve, LinalgError, Matrix};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridworldError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid mdp: {0}")]
    InvalidMdp(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("could not generate a connected wall layout in {0} attempts")]
    UnreachableGoal(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("unsupported artifact schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
}

/// Finite MDP with dense transition and reward tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Row `s * n_actions + a` is a probability vector over next states.
    transition: Vec<f64>,
    /// Indexed by `s * n_actions + a`.
    reward: Vec<f64>,
    discount: f64,
    /// Start-state distribution.
    start: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
        start: Vec<f64>,
    ) -> Result<Self, GridworldError> {
        if n_states == 0 || n_actions == 0 {
            return Err(GridworldError::InvalidMdp("empty state or action space".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(GridworldError::InvalidMdp("transition table size mismatch".into()));
        }
        if reward.len() != n_states * n_actions {
            return Err(GridworldError::InvalidMdp("reward table size mismatch".into()));
        }
        if start.len() != n_states {
            return Err(GridworldError::InvalidMdp("start distribution size mismatch".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(GridworldError::InvalidMdp(format!("discount {discount} not in [0,1)")));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(GridworldError::InvalidMdp("non-finite reward".into()));
        }
        for row in 0..n_states * n_actions {
            let p = &transition[row * n_states..(row + 1) * n_states];
            if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(GridworldError::InvalidMdp(format!("negative mass in row {row}")));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(GridworldError::InvalidMdp(format!(
                    "transition row {row} sums to {sum}"
                )));
            }
        }
        let start_sum: f64 = start.iter().sum();
        if start.iter().any(|&v| v < 0.0) || (start_sum - 1.0).abs() > 1e-12 {
            return Err(GridworldError::InvalidMdp("start distribution not normalized".into()));
        }
        Ok(TabularMdp { n_states, n_actions, transition, reward, discount, start })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let row = s * self.n_actions + a;
        &self.transition[row * self.n_states..(row + 1) * self.n_states]
    }

    pub fn start_distribution(&self) -> &[f64] {
        &self.start
    }

    pub fn sample_start(&self, rng: &mut Rng) -> usize {
        sample_categorical(&self.start, rng)
    }

    pub fn sample_next(&self, s: usize, a: usize, rng: &mut Rng) -> usize {
        sample_categorical(self.transition_row(s, a), rng)
    }
}

fn sample_categorical(p: &[f64], rng: &mut Rng) -> usize {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver of mass unassigned; take the last support point.
    p.iter().rposition(|&w| w > 0.0).unwrap_or(p.len() - 1)
}

/// Construction parameters for the grid environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub side: usize,
    pub wall_prob: f64,
    pub n_actions: usize,
    pub discount: f64,
    /// Goal cell id (`row * side + col`).
    pub goal: usize,
    pub feature_dim: usize,
    pub smoothing_radius: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            side: 16,
            wall_prob: 0.2,
            n_actions: 5,
            discount: 0.95,
            goal: 16 * 16 - 1,
            feature_dim: 64,
            smoothing_radius: 1,
            seed: 0,
        }
    }
}

/// One observed transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionDataset {
    pub records: Vec<Transition>,
    /// Fraction of startable state-action pairs that appear at least once.
    pub coverage: f64,
}

/// Fully built environment: the MDP, per-state observation rows, and the
/// layout internals the oracles and tests need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gridworld {
    pub spec: GridSpec,
    pub mdp: TabularMdp,
    /// `side^2 x feature_dim`, one observation row per cell.
    pub features: Matrix,
    pub walls: Vec<bool>,
    /// Shortest-path distance to the goal; `usize::MAX` when unreachable.
    pub distance: Vec<usize>,
}

const REGEN_ATTEMPTS: usize = 100;

/// Build the grid environment: random walls, deterministic motion with
/// blocked moves as no-ops, reward `-(distance of next cell to goal)/max
/// distance`, and spatially smoothed random observations.
pub fn build_gridworld(spec: &GridSpec) -> Result<Gridworld, GridworldError> {
    if spec.side == 0 || spec.goal >= spec.side * spec.side {
        return Err(GridworldError::InvalidArgument("goal outside the grid".into()));
    }
    if spec.n_actions != 5 {
        return Err(GridworldError::InvalidArgument("grid uses exactly 5 actions".into()));
    }
    if !(0.0..1.0).contains(&spec.wall_prob) {
        return Err(GridworldError::InvalidArgument("wall_prob must be in [0,1)".into()));
    }
    if spec.feature_dim == 0 {
        return Err(GridworldError::InvalidArgument("feature_dim must be positive".into()));
    }
    let n = spec.side * spec.side;
    let mut rng = Rng::new(spec.seed);

    // Resample walls until the goal's connected component is a usable share
    // of the grid; isolated pockets keep distance MAX and never start runs.
    let mut walls = Vec::new();
    let mut distance = Vec::new();
    let mut ok = false;
    for _ in 0..REGEN_ATTEMPTS {
        walls = (0..n).map(|c| c != spec.goal && rng.next_f64() < spec.wall_prob).collect();
        distance = bfs_distances(spec.side, &walls, spec.goal);
        let reachable = distance.iter().filter(|&&d| d != usize::MAX).count();
        if reachable >= n / 2 {
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(GridworldError::UnreachableGoal(REGEN_ATTEMPTS));
    }

    let max_dist = distance.iter().filter(|&&d| d != usize::MAX).max().copied().unwrap_or(0);
    let max_dist = max_dist.max(1) as f64;
    let norm_dist =
        |c: usize| if distance[c] == usize::MAX { 1.0 } else { distance[c] as f64 / max_dist };

    let mut transition = vec![0.0; n * spec.n_actions * n];
    let mut reward = vec![0.0; n * spec.n_actions];
    for s in 0..n {
        for a in 0..spec.n_actions {
            let next = apply_action(spec.side, &walls, s, a);
            let row = s * spec.n_actions + a;
            transition[row * n + next] = 1.0;
            reward[row] = -norm_dist(next);
        }
    }

    // Uniform starts over non-wall cells that can actually reach the goal.
    let startable: Vec<usize> =
        (0..n).filter(|&c| !walls[c] && distance[c] != usize::MAX).collect();
    let mut start = vec![0.0; n];
    for &c in &startable {
        start[c] = 1.0 / startable.len() as f64;
    }

    let features = smoothed_features(spec, &mut rng);
    let mdp = TabularMdp::new(n, spec.n_actions, transition, reward, spec.discount, start)?;
    Ok(Gridworld { spec: spec.clone(), mdp, features, walls, distance })
}

/// Actions: 0 left, 1 right, 2 up, 3 down, 4 no-op. Moves off-grid or into
/// a wall stay put.
fn apply_action(side: usize, walls: &[bool], s: usize, a: usize) -> usize {
    let (r, c) = (s / side, s % side);
    let (nr, nc) = match a {
        0 if c > 0 => (r, c - 1),
        1 if c + 1 < side => (r, c + 1),
        2 if r > 0 => (r - 1, c),
        3 if r + 1 < side => (r + 1, c),
        _ => (r, c),
    };
    let next = nr * side + nc;
    if walls[next] {
        s
    } else {
        next
    }
}

fn bfs_distances(side: usize, walls: &[bool], goal: usize) -> Vec<usize> {
    let n = side * side;
    let mut dist = vec![usize::MAX; n];
    if walls[goal] {
        return dist;
    }
    dist[goal] = 0;
    let mut queue = VecDeque::from([goal]);
    while let Some(cell) = queue.pop_front() {
        let (r, c) = (cell / side, cell % side);
        let mut visit = |nr: usize, nc: usize| {
            let nb = nr * side + nc;
            if !walls[nb] && dist[nb] == usize::MAX {
                dist[nb] = dist[cell] + 1;
                queue.push_back(nb);
            }
        };
        if c > 0 {
            visit(r, c - 1);
        }
        if c + 1 < side {
            visit(r, c + 1);
        }
        if r > 0 {
            visit(r - 1, c);
        }
        if r + 1 < side {
            visit(r + 1, c);
        }
    }
    dist
}

/// Per-cell standard-normal observations, averaged over the square
/// neighborhood of the given radius (off-grid cells excluded, walls
/// included), then each feature column scaled to unit norm.
fn smoothed_features(spec: &GridSpec, rng: &mut Rng) -> Matrix {
    let side = spec.side;
    let n = side * side;
    let d = spec.feature_dim;
    let raw: Vec<f64> = (0..n * d).map(|_| rng.next_gaussian()).collect();
    let r = spec.smoothing_radius as isize;
    let mut out = Matrix::zeros(n, d);
    for cell in 0..n {
        let (cr, cc) = ((cell / side) as isize, (cell % side) as isize);
        let mut count = 0.0;
        let mut acc = vec![0.0; d];
        for dr in -r..=r {
            for dc in -r..=r {
                let (nr, nc) = (cr + dr, cc + dc);
                if nr < 0 || nc < 0 || nr >= side as isize || nc >= side as isize {
                    continue;
                }
                let nb = (nr as usize) * side + nc as usize;
                count += 1.0;
                for j in 0..d {
                    acc[j] += raw[nb * d + j];
                }
            }
        }
        for j in 0..d {
            out[(cell, j)] = acc[j] / count;
        }
    }
    for j in 0..d {
        let norm: f64 = (0..n).map(|i| out[(i, j)] * out[(i, j)]).sum::<f64>().sqrt();
        if norm > 0.0 {
            for i in 0..n {
                out[(i, j)] /= norm;
            }
        }
    }
    out
}

/// Q* by value iteration, run until the Bellman optimality residual is at
/// most `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Matrix {
    let (ns, na, g) = (mdp.n_states, mdp.n_actions, mdp.discount);
    let mut q = Matrix::zeros(ns, na);
    loop {
        let v: Vec<f64> =
            (0..ns).map(|s| (0..na).map(|a| q[(s, a)]).fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut next = Matrix::zeros(ns, na);
        let mut gap: f64 = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let p = mdp.transition_row(s, a);
                let exp: f64 = p.iter().zip(&v).map(|(pi, vi)| pi * vi).sum();
                next[(s, a)] = mdp.reward(s, a) + g * exp;
                gap = gap.max((next[(s, a)] - q[(s, a)]).abs());
            }
        }
        q = next;
        // One more backup moves Q by at most g * gap, so the residual of the
        // current iterate is bounded by that amount.
        if g * gap <= tol {
            return q;
        }
    }
}

/// Exact Q^pi: solve the state-value system `(I - g P_pi) V = R_pi` and
/// expand one backup to Q.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &Matrix) -> Result<Matrix, GridworldError> {
    let (ns, na, g) = (mdp.n_states, mdp.n_actions, mdp.discount);
    check_policy(mdp, policy)?;
    let mut system = Matrix::zeros(ns, ns);
    let mut rhs = Matrix::zeros(ns, 1);
    for s in 0..ns {
        system[(s, s)] = 1.0;
        for a in 0..na {
            let pi = policy[(s, a)];
            if pi == 0.0 {
                continue;
            }
            rhs[(s, 0)] += pi * mdp.reward(s, a);
            let p = mdp.transition_row(s, a);
            for (sn, &mass) in p.iter().enumerate() {
                if mass != 0.0 {
                    system[(s, sn)] -= g * pi * mass;
                }
            }
        }
    }
    let v = solve(&system, &rhs)?;
    let mut q = Matrix::zeros(ns, na);
    for s in 0..ns {
        for a in 0..na {
            let p = mdp.transition_row(s, a);
            let exp: f64 = p.iter().enumerate().map(|(sn, pi)| pi * v[(sn, 0)]).sum();
            q[(s, a)] = mdp.reward(s, a) + g * exp;
        }
    }
    Ok(q)
}

fn check_policy(mdp: &TabularMdp, policy: &Matrix) -> Result<(), GridworldError> {
    if policy.rows() != mdp.n_states || policy.cols() != mdp.n_actions {
        return Err(GridworldError::InvalidArgument("policy shape mismatch".into()));
    }
    for s in 0..mdp.n_states {
        let sum: f64 = (0..mdp.n_actions).map(|a| policy[(s, a)]).sum();
        if (sum - 1.0).abs() > 1e-10 || (0..mdp.n_actions).any(|a| policy[(s, a)] < 0.0) {
            return Err(GridworldError::InvalidArgument(format!(
                "policy row {s} is not a distribution"
            )));
        }
    }
    Ok(())
}

/// Deterministic greedy policy for a Q table (first argmax on ties).
pub fn greedy_policy(q: &Matrix) -> Matrix {
    let mut policy = Matrix::zeros(q.rows(), q.cols());
    for s in 0..q.rows() {
        let mut best = 0;
        for a in 1..q.cols() {
            if q[(s, a)] > q[(s, best)] {
                best = a;
            }
        }
        policy[(s, best)] = 1.0;
    }
    policy
}

pub fn uniform_policy(n_states: usize, n_actions: usize) -> Matrix {
    let mut p = Matrix::zeros(n_states, n_actions);
    for s in 0..n_states {
        for a in 0..n_actions {
            p[(s, a)] = 1.0 / n_actions as f64;
        }
    }
    p
}

pub fn epsilon_greedy_policy(q: &Matrix, epsilon: f64) -> Matrix {
    let greedy = greedy_policy(q);
    let uniform = uniform_policy(q.rows(), q.cols());
    greedy.scale(1.0 - epsilon).add(&uniform.scale(epsilon))
}

/// Expected discounted return of a policy from the start distribution,
/// computed exactly from its Q table.
pub fn start_return(mdp: &TabularMdp, policy: &Matrix, q: &Matrix) -> f64 {
    let mut total = 0.0;
    for s in 0..mdp.n_states {
        let w = mdp.start[s];
        if w == 0.0 {
            continue;
        }
        let v: f64 = (0..mdp.n_actions).map(|a| policy[(s, a)] * q[(s, a)]).sum();
        total += w * v;
    }
    total
}

/// Per-record Monte-Carlo return estimates with their standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McTargets {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Estimate Q^pi(s, a) for every dataset record by rolling out `n_rollouts`
/// truncated trajectories that start with the record's action and then
/// follow the policy.
pub fn monte_carlo_targets(
    mdp: &TabularMdp,
    policy: &Matrix,
    dataset: &TransitionDataset,
    horizon: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<McTargets, GridworldError> {
    check_policy(mdp, policy)?;
    if n_rollouts == 0 {
        return Err(GridworldError::InvalidArgument("need at least one rollout".into()));
    }
    if mdp.discount.powi(horizon as i32) > 1e-6 {
        return Err(GridworldError::InvalidArgument(format!(
            "horizon {horizon} leaves truncation bias above 1e-6 at discount {}",
            mdp.discount
        )));
    }
    let mut rng = Rng::new(seed);
    // Hot path: precompute per-(s,a) successors (deterministic rows resolve
    // to a single cell) and per-state policy rows.
    let n_pairs = mdp.n_states * mdp.n_actions;
    let deterministic_next: Vec<Option<usize>> = (0..n_pairs)
        .map(|row| {
            let p = mdp.transition_row(row / mdp.n_actions, row % mdp.n_actions);
            p.iter().position(|&v| v >= 1.0 - 1e-12)
        })
        .collect();
    let policy_rows: Vec<Vec<f64>> = (0..mdp.n_states)
        .map(|s| (0..mdp.n_actions).map(|a| policy[(s, a)]).collect())
        .collect();
    let mut mean = Vec::with_capacity(dataset.records.len());
    let mut stderr = Vec::with_capacity(dataset.records.len());
    for rec in &dataset.records {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n_rollouts {
            let mut ret = 0.0;
            let mut disc = 1.0;
            let mut s = rec.state;
            let mut a = rec.action;
            for _ in 0..horizon {
                ret += disc * mdp.reward(s, a);
                disc *= mdp.discount;
                s = match deterministic_next[s * mdp.n_actions + a] {
                    Some(next) => {
                        // Still consume one draw so deterministic and
                        // stochastic rows walk the stream identically.
                        let _ = rng.next_f64();
                        next
                    }
                    None => mdp.sample_next(s, a, &mut rng),
                };
                a = sample_categorical(&policy_rows[s], &mut rng);
            }
            sum += ret;
            sum_sq += ret * ret;
        }
        let m = sum / n_rollouts as f64;
        let var = (sum_sq / n_rollouts as f64 - m * m).max(0.0);
        mean.push(m);
        stderr.push((var / n_rollouts as f64).sqrt());
    }
    Ok(McTargets { mean, stderr })
}

#[derive(Debug, Clone)]
pub enum BehaviorPolicy<'a> {
    UniformRandom,
    EpsilonGreedy { q: &'a Matrix, epsilon: f64 },
}

/// Draw `size` independent transitions: a start-distribution state, a
/// behavior action, and the environment's reward and successor.
pub fn collect_dataset(
    mdp: &TabularMdp,
    behavior: &BehaviorPolicy<'_>,
    size: usize,
    seed: u64,
) -> Result<TransitionDataset, GridworldError> {
    let policy = match behavior {
        BehaviorPolicy::UniformRandom => uniform_policy(mdp.n_states, mdp.n_actions),
        BehaviorPolicy::EpsilonGreedy { q, epsilon } => {
            if !(0.0..=1.0).contains(epsilon) {
                return Err(GridworldError::InvalidArgument("epsilon must be in [0,1]".into()));
            }
            epsilon_greedy_policy(q, *epsilon)
        }
    };
    check_policy(mdp, &policy)?;
    let mut rng = Rng::new(seed);
    let mut records = Vec::with_capacity(size);
    let mut seen = vec![false; mdp.n_states * mdp.n_actions];
    for _ in 0..size {
        let s = mdp.sample_start(&mut rng);
        let a = sample_categorical(
            &(0..mdp.n_actions).map(|x| policy[(s, x)]).collect::<Vec<_>>(),
            &mut rng,
        );
        seen[s * mdp.n_actions + a] = true;
        records.push(Transition {
            state: s,
            action: a,
            reward: mdp.reward(s, a),
            next_state: mdp.sample_next(s, a, &mut rng),
        });
    }
    // Coverage counts only pairs whose state can actually start a record.
    let startable: usize = (0..mdp.n_states)
        .filter(|&s| mdp.start[s] > 0.0)
        .map(|_| mdp.n_actions)
        .sum();
    let covered = seen.iter().filter(|&&v| v).count();
    let coverage = if startable == 0 { 0.0 } else { covered as f64 / startable as f64 };
    Ok(TransitionDataset { records, coverage })
}

const ARTIFACT_SCHEMA_VERSION: u32 = 1;

/// On-disk bundle of an environment and optionally its dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridworldArtifact {
    pub schema_version: u32,
    pub world: Gridworld,
    pub dataset: Option<TransitionDataset>,
}

impl GridworldArtifact {
    pub fn new(world: Gridworld, dataset: Option<TransitionDataset>) -> Self {
        GridworldArtifact { schema_version: ARTIFACT_SCHEMA_VERSION, world, dataset }
    }

    pub fn save(&self, path: &Path) -> Result<(), GridworldError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GridworldError> {
        let file = std::fs::File::open(path)?;
        let artifact: GridworldArtifact = serde_json::from_reader(std::io::BufReader::new(file))?;
        if artifact.schema_version != ARTIFACT_SCHEMA_VERSION {
            return Err(GridworldError::SchemaVersion {
                found: artifact.schema_version,
                expected: ARTIFACT_SCHEMA_VERSION,
            });
        }
        Ok(artifact)
    }
}

// Shared by the module tests and the acceptance suite.
#[doc(hidden)]
pub mod test_support {
    use super::*;

    /// Small stochastic MDP with random transitions and rewards in [-1, 0].
    pub fn random_mdp(n_states: usize, n_actions: usize, discount: f64, seed: u64) -> TabularMdp {
        let mut rng = Rng::new(seed);
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let raw: Vec<f64> = (0..n_states).map(|_| rng.next_f64() + 0.05).collect();
            let sum: f64 = raw.iter().sum();
            let mut row: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let fixup: f64 = row.iter().sum();
            row[0] += 1.0 - fixup;
            transition.extend(row);
        }
        let reward: Vec<f64> = (0..n_states * n_actions).map(|_| -rng.next_f64()).collect();
        let start = vec![1.0 / n_states as f64; n_states];
        TabularMdp::new(n_states, n_actions, transition, reward, discount, start).unwrap()
    }

    /// Single state, single action, fixed reward.
    pub fn one_state(reward: f64, discount: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![reward], discount, vec![1.0]).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::{one_state, random_mdp};
    use super::*;
    use crate::linalg::{srank, svd};

    fn bellman_optimality_residual(mdp: &TabularMdp, q: &Matrix) -> f64 {
        let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.discount());
        let v: Vec<f64> =
            (0..ns).map(|s| (0..na).map(|a| q[(s, a)]).fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut worst: f64 = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let exp: f64 =
                    mdp.transition_row(s, a).iter().zip(&v).map(|(p, vi)| p * vi).sum();
                worst = worst.max((q[(s, a)] - mdp.reward(s, a) - g * exp).abs());
            }
        }
        worst
    }

    #[test]
    fn one_state_value_is_geometric_series() {
        let mdp = one_state(1.0, 0.95);
        let q = value_iteration(&mdp, 1e-8);
        assert!((q[(0, 0)] - 20.0).abs() < 1e-6);
        let qpi = policy_evaluation(&mdp, &uniform_policy(1, 1)).unwrap();
        assert!((qpi[(0, 0)] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn zero_reward_gives_zero_values() {
        let mdp = random_mdp(6, 3, 0.9, 5);
        let zeroed = TabularMdp::new(
            6,
            3,
            mdp.transition.clone(),
            vec![0.0; 18],
            0.9,
            mdp.start.clone(),
        )
        .unwrap();
        let q = value_iteration(&zeroed, 1e-10);
        assert!(q.max_abs() < 1e-9);
    }

    #[test]
    fn two_cycle_closed_form() {
        // s0 -> s1 -> s0 deterministically, rewards 1 then 0, discount 0.5.
        let transition = vec![0.0, 1.0, 1.0, 0.0];
        let mdp =
            TabularMdp::new(2, 1, transition, vec![1.0, 0.0], 0.5, vec![1.0, 0.0]).unwrap();
        let q = policy_evaluation(&mdp, &uniform_policy(2, 1)).unwrap();
        assert!((q[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
        assert!((q[(1, 0)] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn value_iteration_agrees_with_greedy_policy_evaluation() {
        let spec = GridSpec { side: 4, goal: 15, seed: 21, ..GridSpec::default() };
        let world = build_gridworld(&spec).unwrap();
        let q = value_iteration(&world.mdp, 1e-9);
        assert!(bellman_optimality_residual(&world.mdp, &q) <= 1e-8);
        let qpi = policy_evaluation(&world.mdp, &greedy_policy(&q)).unwrap();
        assert!(q.sub(&qpi).max_abs() < 1e-7);
    }

    #[test]
    fn value_iteration_contracts_each_sweep() {
        let mdp = random_mdp(8, 3, 0.9, 17);
        let (ns, na) = (8, 3);
        let backup = |q: &Matrix| {
            let v: Vec<f64> = (0..ns)
                .map(|s| (0..na).map(|a| q[(s, a)]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let mut next = Matrix::zeros(ns, na);
            for s in 0..ns {
                for a in 0..na {
                    let exp: f64 =
                        mdp.transition_row(s, a).iter().zip(&v).map(|(p, vi)| p * vi).sum();
                    next[(s, a)] = mdp.reward(s, a) + mdp.discount() * exp;
                }
            }
            next
        };
        let mut q = Matrix::zeros(ns, na);
        let mut prev_gap = f64::INFINITY;
        for _ in 0..30 {
            let next = backup(&q);
            let gap = next.sub(&q).max_abs();
            assert!(gap <= mdp.discount() * prev_gap + 1e-12);
            prev_gap = gap;
            q = next;
        }
    }

    #[test]
    fn open_grid_distances_are_manhattan() {
        let spec = GridSpec { wall_prob: 0.0, goal: 0, seed: 3, ..GridSpec::default() };
        let world = build_gridworld(&spec).unwrap();
        for cell in 0..256 {
            let (r, c) = (cell / 16, cell % 16);
            assert_eq!(world.distance[cell], r + c);
        }
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let spec = GridSpec { seed: 42, ..GridSpec::default() };
        let a = build_gridworld(&spec).unwrap();
        let b = build_gridworld(&spec).unwrap();
        assert_eq!(a.walls, b.walls);
        assert_eq!(a.features, b.features);
        assert_eq!(a.mdp.reward, b.mdp.reward);
    }

    #[test]
    fn rewards_bounded_and_values_bounded() {
        let spec = GridSpec { seed: 9, ..GridSpec::default() };
        let world = build_gridworld(&spec).unwrap();
        assert!(world.mdp.reward.iter().all(|&r| (-1.0..=0.0).contains(&r)));
        let q = value_iteration(&world.mdp, 1e-8);
        assert!(q.max_abs() <= 1.0 / (1.0 - 0.95) + 1e-6);
    }

    #[test]
    fn unsmoothed_features_have_near_full_rank() {
        let spec = GridSpec { smoothing_radius: 0, seed: 8, ..GridSpec::default() };
        let world = build_gridworld(&spec).unwrap();
        let spec_svd = svd(&world.features).unwrap();
        let sr = srank(&spec_svd, 0.01).unwrap();
        assert!(sr >= 55, "srank {sr} of raw 256x64 features");
    }

    #[test]
    fn smoothing_lowers_feature_rank() {
        let raw = build_gridworld(&GridSpec { smoothing_radius: 0, seed: 8, ..GridSpec::default() })
            .unwrap();
        let smooth =
            build_gridworld(&GridSpec { smoothing_radius: 2, seed: 8, ..GridSpec::default() })
                .unwrap();
        let sr_raw = srank(&svd(&raw.features).unwrap(), 0.01).unwrap();
        let sr_smooth = srank(&svd(&smooth.features).unwrap(), 0.01).unwrap();
        assert!(sr_smooth < sr_raw, "{sr_smooth} vs {sr_raw}");
    }

    #[test]
    fn mc_matches_exact_values_on_deterministic_mdp() {
        let spec = GridSpec { side: 4, goal: 15, seed: 2, ..GridSpec::default() };
        let world = build_gridworld(&spec).unwrap();
        let policy = uniform_policy(16, 5);
        let qpi = policy_evaluation(&world.mdp, &policy).unwrap();
        let dataset =
            collect_dataset(&world.mdp, &BehaviorPolicy::UniformRandom, 40, 77).unwrap();
        // Transitions are deterministic but the policy is stochastic, so
        // average many rollouts and allow sampling error.
        let horizon = 300;
        let mc =
            monte_carlo_targets(&world.mdp, &policy, &dataset, horizon, 400, 5).unwrap();
        for (i, rec) in dataset.records.iter().enumerate() {
            let exact = qpi[(rec.state, rec.action)];
            let tol = 3.0 * mc.stderr[i] + 1e-4;
            assert!(
                (mc.mean[i] - exact).abs() <= tol,
                "record {i}: mc {} exact {exact} stderr {}",
                mc.mean[i],
                mc.stderr[i]
            );
        }
    }

    #[test]
    fn mc_zero_reward_gives_zero_targets() {
        let mdp = one_state(0.0, 0.9);
        let dataset = TransitionDataset {
            records: vec![Transition { state: 0, action: 0, reward: 0.0, next_state: 0 }],
            coverage: 1.0,
        };
        let mc =
            monte_carlo_targets(&mdp, &uniform_policy(1, 1), &dataset, 200, 10, 1).unwrap();
        assert_eq!(mc.mean[0], 0.0);
        assert_eq!(mc.stderr[0], 0.0);
    }

    #[test]
    fn mc_rejects_short_horizon() {
        let mdp = one_state(1.0, 0.95);
        let dataset = TransitionDataset { records: vec![], coverage: 0.0 };
        assert!(monte_carlo_targets(&mdp, &uniform_policy(1, 1), &dataset, 10, 5, 1).is_err());
    }

    #[test]
    fn dataset_empty_and_deterministic() {
        let mdp = random_mdp(5, 2, 0.9, 1);
        let empty = collect_dataset(&mdp, &BehaviorPolicy::UniformRandom, 0, 3).unwrap();
        assert!(empty.records.is_empty());
        let a = collect_dataset(&mdp, &BehaviorPolicy::UniformRandom, 50, 3).unwrap();
        let b = collect_dataset(&mdp, &BehaviorPolicy::UniformRandom, 50, 3).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn uniform_behavior_covers_all_pairs() {
        let mdp = random_mdp(5, 2, 0.9, 4);
        let data = collect_dataset(&mdp, &BehaviorPolicy::UniformRandom, 2000, 6).unwrap();
        assert_eq!(data.coverage, 1.0);
    }

    #[test]
    fn artifact_round_trip() {
        let spec = GridSpec { side: 4, goal: 15, seed: 13, ..GridSpec::default() };
        let world = build_gridworld(&spec).unwrap();
        let dataset =
            collect_dataset(&world.mdp, &BehaviorPolicy::UniformRandom, 20, 1).unwrap();
        let artifact = GridworldArtifact::new(world.clone(), Some(dataset.clone()));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("world.json");
        artifact.save(&path).unwrap();
        let loaded = GridworldArtifact::load(&path).unwrap();
        assert_eq!(loaded.world.walls, world.walls);
        assert_eq!(loaded.world.features, world.features);
        assert_eq!(loaded.dataset.unwrap().records, dataset.records);
    }

    #[test]
    fn artifact_rejects_schema_mismatch() {
        let spec = GridSpec { side: 4, goal: 15, seed: 13, ..GridSpec::default() };
        let world = build_gridworld(&spec).unwrap();
        let mut artifact = GridworldArtifact::new(world, None);
        artifact.schema_version = 999;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("world.json");
        artifact.save(&path).unwrap();
        assert!(matches!(
            GridworldArtifact::load(&path),
            Err(GridworldError::SchemaVersion { .. })
        ));
    }
}
