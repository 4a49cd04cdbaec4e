//! Target computation and the fitted Q-iteration training loops.

use super::mlp::{Adam, Mlp};
use super::penalty::{feature_srank, lp_penalty};
use super::NeuralError;
use crate::gridworld::{
    greedy_policy, policy_evaluation, start_return, TabularMdp, Transition, TransitionDataset,
};
use crate::linalg::{solve, Matrix};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// How regression targets are formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Backup {
    /// `r + g max_a' Q(s', a')`.
    HardMax,
    /// `r + g tau logsumexp(Q(s', .)/tau)`.
    Soft { tau: f64 },
    /// `r + g sum_a' pi(a'|s') Q(s', a')` for the context policy.
    Evaluation,
    /// Precomputed Monte-Carlo returns; no bootstrapping.
    MonteCarlo,
    /// Oracle Q*(s, a); plain supervised regression.
    SupervisedQstar,
}

/// Side inputs some backup modes require.
#[derive(Debug, Clone, Default)]
pub struct TargetContext<'a> {
    /// Evaluation policy, `n_states x n_actions` row-stochastic.
    pub policy: Option<&'a Matrix>,
    /// Monte-Carlo return per dataset record.
    pub mc_targets: Option<&'a [f64]>,
    /// Oracle Q* table.
    pub qstar: Option<&'a Matrix>,
}

/// Regression targets for the given dataset records, computed from the
/// frozen `net` (the previous iterate).
pub fn td_targets(
    net: &Mlp,
    dataset: &TransitionDataset,
    indices: &[usize],
    features: &Matrix,
    discount: f64,
    backup: &Backup,
    ctx: &TargetContext<'_>,
) -> Result<Vec<f64>, NeuralError> {
    let mut out = Vec::with_capacity(indices.len());
    for &idx in indices {
        let rec = &dataset.records[idx];
        let target = match backup {
            Backup::MonteCarlo => {
                let mc = ctx
                    .mc_targets
                    .ok_or_else(|| NeuralError::Config("monte_carlo backup needs mc_targets".into()))?;
                mc[idx]
            }
            Backup::SupervisedQstar => {
                let qstar = ctx
                    .qstar
                    .ok_or_else(|| NeuralError::Config("supervised_qstar backup needs qstar".into()))?;
                qstar[(rec.state, rec.action)]
            }
            bootstrapped => {
                let x: Vec<f64> =
                    (0..features.cols()).map(|j| features[(rec.next_state, j)]).collect();
                let (q_next, _) = net.forward(&x);
                let boot = match bootstrapped {
                    Backup::HardMax => q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    Backup::Soft { tau } => {
                        if *tau <= 0.0 {
                            return Err(NeuralError::Config("soft backup needs tau > 0".into()));
                        }
                        let m = q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = q_next.iter().map(|&q| ((q - m) / tau).exp()).sum();
                        m + tau * sum.ln()
                    }
                    Backup::Evaluation => {
                        let policy = ctx.policy.ok_or_else(|| {
                            NeuralError::Config("evaluation backup needs a policy".into())
                        })?;
                        (0..q_next.len())
                            .map(|a| policy[(rec.next_state, a)] * q_next[a])
                            .sum()
                    }
                    _ => unreachable!(),
                };
                rec.reward + discount * boot
            }
        };
        out.push(target);
    }
    Ok(out)
}

/// Minimum root-mean-square error of fitting `targets` by a single linear
/// readout of the feature rows, with a small ridge term for conditioning.
pub fn qstar_fit_error(features: &Matrix, targets: &[f64]) -> Result<f64, NeuralError> {
    const RIDGE: f64 = 1e-8;
    let n = features.rows();
    if n == 0 || n != targets.len() {
        return Err(NeuralError::Config("feature rows and targets must align".into()));
    }
    let d = features.cols();
    let mut gram = features.transpose().matmul(features);
    for j in 0..d {
        gram[(j, j)] += RIDGE;
    }
    let mut rhs = Matrix::zeros(d, 1);
    for j in 0..d {
        let mut acc = 0.0;
        for i in 0..n {
            acc += features[(i, j)] * targets[i];
        }
        rhs[(j, 0)] = acc;
    }
    let w = solve(&gram, &rhs)?;
    let mut sq = 0.0;
    for i in 0..n {
        let mut pred = 0.0;
        for j in 0..d {
            pred += features[(i, j)] * w[(j, 0)];
        }
        let r = pred - targets[i];
        sq += r * r;
    }
    Ok((sq / n as f64).sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub fitting_iterations: usize,
    pub grad_steps_per_iteration: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub backup: Backup,
    /// Penalty weight; 0 skips the penalty computation entirely.
    pub penalty_alpha: f64,
    /// Fresh network at the start of every fitting iteration (targets still
    /// come from the previous trained iterate).
    pub reinit_each_iteration: bool,
    /// Cap on the number of records sampled for the srank measurement.
    pub srank_batch: usize,
    pub srank_delta: f64,
    /// Record a trace point every this many gradient steps.
    pub trace_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            fitting_iterations: 50,
            grad_steps_per_iteration: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            backup: Backup::Soft { tau: 0.1 },
            penalty_alpha: 0.0,
            reinit_each_iteration: false,
            srank_batch: 2048,
            srank_delta: 0.01,
            trace_stride: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub step: usize,
    pub srank: usize,
    pub td_error: f64,
    pub qstar_fit_error: f64,
    pub greedy_return: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankTrace {
    pub points: Vec<TracePoint>,
    pub diverged: bool,
    pub final_net: Mlp,
}

/// Everything the tracer needs to score a network exactly.
#[derive(Debug, Clone, Copy)]
pub struct TrainEnv<'a> {
    pub mdp: &'a TabularMdp,
    /// Per-state observation rows.
    pub features: &'a Matrix,
    pub qstar: &'a Matrix,
}

struct Tracer<'a> {
    env: TrainEnv<'a>,
    cfg: &'a TrainConfig,
    points: Vec<TracePoint>,
}

impl<'a> Tracer<'a> {
    fn new(env: TrainEnv<'a>, cfg: &'a TrainConfig) -> Self {
        Tracer { env, cfg, points: Vec::new() }
    }

    /// Record srank, TD error, Q*-fit error and exact greedy return for the
    /// current network on a sampled measurement batch.
    fn record(
        &mut self,
        net: &Mlp,
        iteration: usize,
        step: usize,
        pool: &[Transition],
        targets_for: &dyn Fn(&[usize]) -> Result<Vec<f64>, NeuralError>,
        rng: &mut Rng,
    ) -> Result<(), NeuralError> {
        let n_measure = self.cfg.srank_batch.min(pool.len());
        let indices: Vec<usize> = (0..n_measure).map(|_| rng.next_index(pool.len())).collect();
        let obs_dim = self.env.features.cols();
        let mut x = Matrix::zeros(n_measure, obs_dim);
        for (row, &idx) in indices.iter().enumerate() {
            for j in 0..obs_dim {
                x[(row, j)] = self.env.features[(pool[idx].state, j)];
            }
        }
        let cache = net.forward_batch(&x);
        let srank = feature_srank(&cache.a2, self.cfg.srank_delta)?;
        let targets = targets_for(&indices)?;
        let mut sq = 0.0;
        for (row, &idx) in indices.iter().enumerate() {
            let d = cache.q[(row, pool[idx].action)] - targets[row];
            sq += d * d;
        }
        let td_error = sq / n_measure.max(1) as f64;
        let penalty = if self.cfg.penalty_alpha > 0.0 { lp_penalty(&cache.a2)?.0 } else { 0.0 };

        // Exact metrics over the full state space.
        let all_states = self.env.features;
        let full = net.forward_batch(all_states);
        let (ns, na) = (self.env.mdp.n_states(), self.env.mdp.n_actions());
        let mut q_table = Matrix::zeros(ns, na);
        for s in 0..ns {
            for a in 0..na {
                q_table[(s, a)] = full.q[(s, a)];
            }
        }
        let policy = greedy_policy(&q_table);
        let q_pi = policy_evaluation(self.env.mdp, &policy)?;
        let greedy_return = start_return(self.env.mdp, &policy, &q_pi);
        // Q*-fit probe: state features duplicated across actions with a
        // single linear readout.
        let mut design = Matrix::zeros(ns * na, full.a2.cols());
        let mut qstar_flat = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                for j in 0..full.a2.cols() {
                    design[(s * na + a, j)] = full.a2[(s, j)];
                }
                qstar_flat[s * na + a] = self.env.qstar[(s, a)];
            }
        }
        let fit = qstar_fit_error(&design, &qstar_flat)?;
        self.points.push(TracePoint {
            iteration,
            step,
            srank,
            td_error,
            qstar_fit_error: fit,
            greedy_return,
            penalty,
        });
        Ok(())
    }
}

/// Offline fitted Q-iteration: `K` iterations of `T` Adam steps against
/// targets frozen from the previous iterate.
pub fn fqi_train(
    net: Mlp,
    env: TrainEnv<'_>,
    dataset: &TransitionDataset,
    cfg: &TrainConfig,
    ctx: &TargetContext<'_>,
    seed: u64,
) -> Result<RankTrace, NeuralError> {
    validate_cfg(cfg)?;
    if dataset.records.is_empty() && cfg.fitting_iterations > 0 {
        return Err(NeuralError::Config("offline training needs a nonempty dataset".into()));
    }
    let mut rng = Rng::new(seed);
    let mut net = net;
    let mut adam = Adam::new(cfg.learning_rate, net.n_params());
    let mut tracer = Tracer::new(env, cfg);
    let mut diverged = false;
    let pool = &dataset.records;
    let all_indices: Vec<usize> = (0..pool.len()).collect();
    let mut global_step = 0usize;

    'outer: for k in 0..cfg.fitting_iterations {
        let snapshot = net.clone();
        if cfg.reinit_each_iteration {
            net = Mlp::he_init(net.dims(), &mut rng);
            adam = Adam::new(cfg.learning_rate, net.n_params());
        }
        let frozen = td_targets(
            &snapshot,
            dataset,
            &all_indices,
            env.features,
            env.mdp.discount(),
            &cfg.backup,
            ctx,
        )?;
        let targets_for = |indices: &[usize]| -> Result<Vec<f64>, NeuralError> {
            Ok(indices.iter().map(|&i| frozen[i]).collect())
        };
        if k == 0 {
            tracer.record(&net, 0, 0, pool, &targets_for, &mut rng)?;
        }
        for _t in 0..cfg.grad_steps_per_iteration {
            global_step += 1;
            let batch: Vec<usize> =
                (0..cfg.batch_size).map(|_| rng.next_index(pool.len())).collect();
            let obs_dim = env.features.cols();
            let mut x = Matrix::zeros(batch.len(), obs_dim);
            for (row, &idx) in batch.iter().enumerate() {
                for j in 0..obs_dim {
                    x[(row, j)] = env.features[(pool[idx].state, j)];
                }
            }
            let cache = net.forward_batch(&x);
            let mut d_q = Matrix::zeros(batch.len(), net.n_actions());
            let mut loss = 0.0;
            for (row, &idx) in batch.iter().enumerate() {
                let a = pool[idx].action;
                let diff = cache.q[(row, a)] - frozen[idx];
                loss += diff * diff;
                d_q[(row, a)] = 2.0 * diff / batch.len() as f64;
            }
            loss /= batch.len() as f64;
            let d_features = if cfg.penalty_alpha > 0.0 {
                let (value, grad) = lp_penalty(&cache.a2)?;
                loss += cfg.penalty_alpha * value;
                Some(grad.scale(cfg.penalty_alpha))
            } else {
                None
            };
            if !loss.is_finite() {
                diverged = true;
                break 'outer;
            }
            let grad = net.backward(&x, &cache, &d_q, d_features.as_ref());
            adam.step(net.params_mut(), &grad);
            if !net.is_finite() {
                diverged = true;
                break 'outer;
            }
            let last = k + 1 == cfg.fitting_iterations && _t + 1 == cfg.grad_steps_per_iteration;
            if global_step % cfg.trace_stride == 0 || last {
                tracer.record(&net, k, global_step, pool, &targets_for, &mut rng)?;
            }
        }
    }
    Ok(RankTrace { points: tracer.points, diverged, final_net: net })
}

/// Online variant: environment interaction with a FIFO replay buffer and
/// epsilon-greedy acting; targets are frozen per fitting iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub env_steps_per_iteration: usize,
    pub grad_steps_per_env_step: usize,
    pub buffer_capacity: usize,
    pub epsilon: f64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            env_steps_per_iteration: 100,
            grad_steps_per_env_step: 1,
            buffer_capacity: 10_000,
            epsilon: 0.1,
        }
    }
}

pub fn fqi_train_online(
    net: Mlp,
    env: TrainEnv<'_>,
    cfg: &TrainConfig,
    online: &OnlineConfig,
    ctx: &TargetContext<'_>,
    seed: u64,
) -> Result<RankTrace, NeuralError> {
    validate_cfg(cfg)?;
    if !(0.0..=1.0).contains(&online.epsilon) {
        return Err(NeuralError::Config("epsilon must be in [0,1]".into()));
    }
    if online.buffer_capacity == 0 {
        return Err(NeuralError::Config("buffer capacity must be positive".into()));
    }
    let mut rng = Rng::new(seed);
    let mut net = net;
    let mut adam = Adam::new(cfg.learning_rate, net.n_params());
    let mut tracer = Tracer::new(env, cfg);
    let mut diverged = false;
    let mut buffer: VecDeque<Transition> = VecDeque::with_capacity(online.buffer_capacity);
    let mut state = env.mdp.sample_start(&mut rng);
    let obs_dim = env.features.cols();
    let mut global_step = 0usize;

    'outer: for k in 0..cfg.fitting_iterations {
        let snapshot = net.clone();
        if cfg.reinit_each_iteration {
            net = Mlp::he_init(net.dims(), &mut rng);
            adam = Adam::new(cfg.learning_rate, net.n_params());
        }
        for env_step in 0..online.env_steps_per_iteration {
            // Act.
            let x: Vec<f64> = (0..obs_dim).map(|j| env.features[(state, j)]).collect();
            let (q, _) = net.forward(&x);
            let action = if rng.next_f64() < online.epsilon {
                rng.next_index(env.mdp.n_actions())
            } else {
                let mut best = 0;
                for a in 1..q.len() {
                    if q[a] > q[best] {
                        best = a;
                    }
                }
                best
            };
            let next = env.mdp.sample_next(state, action, &mut rng);
            if buffer.len() == online.buffer_capacity {
                buffer.pop_front();
            }
            buffer.push_back(Transition {
                state,
                action,
                reward: env.mdp.reward(state, action),
                next_state: next,
            });
            state = next;

            if buffer.len() < cfg.batch_size {
                continue;
            }
            let pool: Vec<Transition> = buffer.iter().copied().collect();
            let pool_ds = TransitionDataset { records: pool.clone(), coverage: 0.0 };
            for _g in 0..online.grad_steps_per_env_step {
                global_step += 1;
                let batch: Vec<usize> =
                    (0..cfg.batch_size).map(|_| rng.next_index(pool.len())).collect();
                let targets = td_targets(
                    &snapshot,
                    &pool_ds,
                    &batch,
                    env.features,
                    env.mdp.discount(),
                    &cfg.backup,
                    ctx,
                )?;
                let mut x = Matrix::zeros(batch.len(), obs_dim);
                for (row, &idx) in batch.iter().enumerate() {
                    for j in 0..obs_dim {
                        x[(row, j)] = env.features[(pool[idx].state, j)];
                    }
                }
                let cache = net.forward_batch(&x);
                let mut d_q = Matrix::zeros(batch.len(), net.n_actions());
                let mut loss = 0.0;
                for (row, &idx) in batch.iter().enumerate() {
                    let a = pool[idx].action;
                    let diff = cache.q[(row, a)] - targets[row];
                    loss += diff * diff;
                    d_q[(row, a)] = 2.0 * diff / batch.len() as f64;
                }
                loss /= batch.len() as f64;
                let d_features = if cfg.penalty_alpha > 0.0 {
                    let (value, grad) = lp_penalty(&cache.a2)?;
                    loss += cfg.penalty_alpha * value;
                    Some(grad.scale(cfg.penalty_alpha))
                } else {
                    None
                };
                if !loss.is_finite() {
                    diverged = true;
                    break 'outer;
                }
                let grad = net.backward(&x, &cache, &d_q, d_features.as_ref());
                adam.step(net.params_mut(), &grad);
                if !net.is_finite() {
                    diverged = true;
                    break 'outer;
                }
            }
            let last = k + 1 == cfg.fitting_iterations
                && env_step + 1 == online.env_steps_per_iteration;
            if (global_step > 0 && global_step % cfg.trace_stride == 0) || last {
                let snapshot_ref = &snapshot;
                let targets_for = |indices: &[usize]| -> Result<Vec<f64>, NeuralError> {
                    td_targets(
                        snapshot_ref,
                        &pool_ds,
                        indices,
                        env.features,
                        env.mdp.discount(),
                        &cfg.backup,
                        ctx,
                    )
                };
                tracer.record(&net, k, global_step, &pool, &targets_for, &mut rng)?;
            }
        }
    }
    Ok(RankTrace { points: tracer.points, diverged, final_net: net })
}

fn validate_cfg(cfg: &TrainConfig) -> Result<(), NeuralError> {
    if cfg.batch_size == 0 {
        return Err(NeuralError::Config("batch_size must be positive".into()));
    }
    if cfg.trace_stride == 0 {
        return Err(NeuralError::Config("trace_stride must be positive".into()));
    }
    if cfg.penalty_alpha < 0.0 {
        return Err(NeuralError::Config("penalty_alpha must be nonnegative".into()));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(NeuralError::Config("learning_rate must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.srank_delta) {
        return Err(NeuralError::Config("srank_delta must be in (0,1)".into()));
    }
    Ok(())
}
