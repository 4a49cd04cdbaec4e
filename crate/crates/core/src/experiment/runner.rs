//! Experiment execution: one deterministic trace per seed, seeds fanned out
//! across worker threads, one CSV file per run.

use super::config::{ExperimentConfig, ExperimentKind};
use super::trace::TraceFile;
use super::ExperimentError;
use crate::deep_linear::{
    balanced_init, run_linear_fqi, FlowConfig, LinearFqiInputs, LinearTargetMode,
};
use crate::gridworld::{
    build_gridworld, collect_dataset, epsilon_greedy_policy, monte_carlo_targets,
    value_iteration, BehaviorPolicy, GridSpec, Gridworld,
};
use crate::kernel::{
    build_normal_matrix, m_spectrum_trace, psd_subsequence, NormalBlock, NormalMatrixSpec,
};
use crate::linalg::{matrix_power_sum, random_psd, srank, svd, Matrix};
use crate::neural::{
    fqi_train, fqi_train_online, Backup, Mlp, OnlineConfig, RankTrace, TargetContext,
    TrainConfig, TrainEnv,
};
use crate::rng::Rng;
use std::path::{Path, PathBuf};

const KERNEL_COLUMNS: &[&str] = &["k", "srank", "sigma_max", "sigma_min", "nuclear_norm"];
const LINEAR_COLUMNS: &[&str] =
    &["iteration", "step", "srank", "td_error", "balancedness", "sigma_max", "sigma_min"];
const GRID_COLUMNS: &[&str] = &[
    "iteration",
    "step",
    "srank",
    "td_error",
    "qstar_fit_error",
    "greedy_return",
    "penalty",
];

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub diverged_seeds: Vec<u64>,
    pub total_seeds: usize,
}

impl RunOutcome {
    pub fn all_diverged(&self) -> bool {
        self.total_seeds > 0 && self.diverged_seeds.len() == self.total_seeds
    }
}

/// Run every seed of the configuration and write one trace file per seed
/// into `out_dir`. Divergence is recorded in the trace, not an error here.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome, ExperimentError> {
    std::fs::create_dir_all(out_dir)?;
    let results: Vec<Result<TraceFile, ExperimentError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || run_single_seed(cfg, seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment worker panicked"))
            .collect()
    });
    let digest = cfg.digest();
    let mut files = Vec::new();
    let mut diverged_seeds = Vec::new();
    for result in results {
        let trace = result?;
        if trace.diverged {
            diverged_seeds.push(trace.seed);
        }
        let name = format!("{}-{}-s{}.csv", cfg.experiment, &digest[..8], trace.seed);
        let path = out_dir.join(name);
        trace.save(&path)?;
        files.push(path);
    }
    Ok(RunOutcome { files, diverged_seeds, total_seeds: cfg.seeds.len() })
}

/// One deterministic run of the experiment for one seed.
pub fn run_single_seed(cfg: &ExperimentConfig, seed: u64) -> Result<TraceFile, ExperimentError> {
    match cfg.experiment {
        ExperimentKind::KernelPsd => run_kernel_psd(cfg, seed),
        ExperimentKind::KernelNormal => run_kernel_normal(cfg, seed),
        ExperimentKind::LinearFlow => run_linear(cfg, seed, true),
        ExperimentKind::LinearFqi => run_linear(cfg, seed, false),
        ExperimentKind::GridOffline | ExperimentKind::GridPenalty => run_grid_offline(cfg, seed),
        ExperimentKind::GridAblations => run_grid_ablations(cfg, seed),
        ExperimentKind::GridOnline => run_grid_online(cfg, seed),
    }
}

fn new_trace(cfg: &ExperimentConfig, seed: u64, columns: &[&str]) -> TraceFile {
    TraceFile::new(cfg.experiment.as_str(), seed, &cfg.digest(), &cfg.serialize(), columns)
}

fn run_kernel_psd(cfg: &ExperimentConfig, seed: u64) -> Result<TraceFile, ExperimentError> {
    let dim = cfg.get_usize("dim")?;
    let radius = cfg.get_f64("radius")?;
    let iterations = cfg.get_usize("iterations")?;
    let mut rng = Rng::new(seed);
    let s = random_psd(dim, radius, &mut rng);
    let mut trace = new_trace(cfg, seed, KERNEL_COLUMNS);
    for (k, spec, rank) in m_spectrum_trace(&s, iterations, 0.01)? {
        let sigma = &spec.sigma;
        trace.push_row(vec![
            k as f64,
            rank as f64,
            sigma[0],
            sigma[sigma.len() - 1],
            sigma.iter().sum(),
        ]);
    }
    Ok(trace)
}

/// `rho:p/q` comma-separated block list.
fn parse_blocks(raw: &str) -> Result<Vec<NormalBlock>, ExperimentError> {
    let bad = |tok: &str| ExperimentError::Config(format!("bad block '{tok}', expected rho:p/q"));
    raw.split(',')
        .map(|tok| {
            let tok = tok.trim();
            let (rho, angle) = tok.split_once(':').ok_or_else(|| bad(tok))?;
            let (p, q) = angle.split_once('/').ok_or_else(|| bad(tok))?;
            Ok(NormalBlock {
                modulus: rho.trim().parse().map_err(|_| bad(tok))?,
                angle_num: p.trim().parse().map_err(|_| bad(tok))?,
                angle_den: q.trim().parse().map_err(|_| bad(tok))?,
            })
        })
        .collect()
}

fn run_kernel_normal(cfg: &ExperimentConfig, seed: u64) -> Result<TraceFile, ExperimentError> {
    let blocks = parse_blocks(cfg.get("blocks")?)?;
    let count = cfg.get_usize("count")?;
    let spec = NormalMatrixSpec::new(blocks, seed)?;
    let s = build_normal_matrix(&spec)?;
    let mut trace = new_trace(cfg, seed, KERNEL_COLUMNS);
    for k in psd_subsequence(&spec, count)? {
        let m = matrix_power_sum(&s, k)?;
        let sv = svd(&m)?;
        let rank = srank(&sv, 0.01)?;
        trace.push_row(vec![
            k as f64,
            rank as f64,
            sv.sigma[0],
            sv.sigma[sv.sigma.len() - 1],
            sv.sigma.iter().sum(),
        ]);
    }
    Ok(trace)
}

/// Linear-network experiments. The flow variant regresses onto fixed random
/// targets (discount zero makes the bootstrap term vanish); the FQI variant
/// bootstraps through a deterministic cycle.
fn run_linear(
    cfg: &ExperimentConfig,
    seed: u64,
    flow_only: bool,
) -> Result<TraceFile, ExperimentError> {
    let dims = cfg.get_usize_list("dims")?;
    let sigma = cfg.get_f64_list("sigma")?;
    let net = balanced_init(&dims, &sigma, seed)?;
    let n = dims[0];
    // Targets come from a reward stream decoupled from the init draw.
    let mut reward_rng = Rng::new(seed ^ 0x9e3779b97f4a7c15);
    let reward: Vec<f64> = (0..n).map(|_| reward_rng.next_gaussian()).collect();
    let (transition, fc) = if flow_only {
        let fc = FlowConfig {
            step: cfg.get_f64("step")?,
            steps_per_iteration: cfg.get_usize("steps")?,
            fitting_iterations: 1,
            discount: 0.0,
            svd_trace_stride: cfg.get_usize("trace_stride")?,
            srank_delta: cfg.get_f64("srank_delta")?,
        };
        (Matrix::identity(n), fc)
    } else {
        let mut t = Matrix::zeros(n, n);
        for i in 0..n {
            t[(i, (i + 1) % n)] = 1.0;
        }
        let fc = FlowConfig {
            step: cfg.get_f64("step")?,
            steps_per_iteration: cfg.get_usize("steps_per_iteration")?,
            fitting_iterations: cfg.get_usize("fitting_iterations")?,
            discount: cfg.get_f64("discount")?,
            svd_trace_stride: cfg.get_usize("trace_stride")?,
            srank_delta: cfg.get_f64("srank_delta")?,
        };
        (t, fc)
    };
    let io = LinearFqiInputs::one_hot(transition, reward);
    let steps_per = fc.steps_per_iteration;
    let result = run_linear_fqi(&net, &io, &fc, LinearTargetMode::Bootstrap)?;
    let mut trace = new_trace(cfg, seed, LINEAR_COLUMNS);
    trace.diverged = result.diverged;
    for p in &result.points {
        trace.push_row(vec![
            p.iteration as f64,
            (p.iteration * steps_per + p.step) as f64,
            p.srank as f64,
            p.td_error,
            p.balancedness,
            p.sigma[0],
            p.sigma[p.sigma.len() - 1],
        ]);
    }
    Ok(trace)
}

struct GridSetup {
    world: Gridworld,
    qstar: Matrix,
}

fn grid_setup(cfg: &ExperimentConfig) -> Result<GridSetup, ExperimentError> {
    let spec = GridSpec {
        side: cfg.get_usize("grid.side")?,
        wall_prob: cfg.get_f64("grid.wall_prob")?,
        n_actions: 5,
        discount: cfg.get_f64("grid.discount")?,
        goal: cfg.get_usize("grid.goal")?,
        feature_dim: cfg.get_usize("grid.feature_dim")?,
        smoothing_radius: cfg.get_usize("grid.smoothing_radius")?,
        seed: cfg.get_u64("grid.seed")?,
    };
    let world = build_gridworld(&spec)?;
    let qstar = value_iteration(&world.mdp, 1e-10);
    Ok(GridSetup { world, qstar })
}

fn grid_train_cfg(cfg: &ExperimentConfig) -> Result<TrainConfig, ExperimentError> {
    Ok(TrainConfig {
        fitting_iterations: cfg.get_usize("train.fitting_iterations")?,
        grad_steps_per_iteration: cfg.get_usize("train.grad_steps_per_iteration")?,
        batch_size: cfg.get_usize("train.batch_size")?,
        learning_rate: cfg.get_f64("train.learning_rate")?,
        backup: parse_backup(cfg)?,
        penalty_alpha: cfg.get_f64("train.penalty_alpha")?,
        reinit_each_iteration: cfg.get_bool("train.reinit")?,
        srank_batch: cfg.get_usize("train.srank_batch")?,
        srank_delta: cfg.get_f64("train.srank_delta")?,
        trace_stride: cfg.get_usize("train.trace_stride")?,
    })
}

fn parse_backup(cfg: &ExperimentConfig) -> Result<Backup, ExperimentError> {
    match cfg.get("train.backup")? {
        "soft" => Ok(Backup::Soft { tau: cfg.get_f64("train.tau")? }),
        "hard" => Ok(Backup::HardMax),
        other => Err(ExperimentError::Config(format!(
            "key 'train.backup': '{other}' is not 'soft' or 'hard'"
        ))),
    }
}

/// Per-purpose sub-seeds so that e.g. the dataset draw and the network init
/// never share a stream.
struct GridSeeds {
    dataset: u64,
    net: u64,
    train: u64,
    rollout: u64,
}

impl GridSeeds {
    fn derive(seed: u64) -> Self {
        let mut root = Rng::new(seed);
        GridSeeds {
            dataset: root.next_u64(),
            net: root.next_u64(),
            train: root.next_u64(),
            rollout: root.next_u64(),
        }
    }
}

/// The second hidden activation is the feature map whose rank is traced, so
/// the hidden width caps the measurable srank.
fn grid_net(
    world: &Gridworld,
    cfg: &ExperimentConfig,
    net_seed: u64,
) -> Result<Mlp, ExperimentError> {
    let width = cfg.get_usize("train.hidden_width")?;
    if width == 0 {
        return Err(ExperimentError::Config("key 'train.hidden_width': must be positive".into()));
    }
    let dims = [world.spec.feature_dim, width, width, world.spec.n_actions];
    Ok(Mlp::he_init(dims, &mut Rng::new(net_seed)))
}

fn grid_trace_file(
    cfg: &ExperimentConfig,
    seed: u64,
    result: &RankTrace,
) -> Result<TraceFile, ExperimentError> {
    let mut trace = new_trace(cfg, seed, GRID_COLUMNS);
    trace.diverged = result.diverged;
    for p in &result.points {
        trace.push_row(vec![
            p.iteration as f64,
            p.step as f64,
            p.srank as f64,
            p.td_error,
            p.qstar_fit_error,
            p.greedy_return,
            p.penalty,
        ]);
    }
    Ok(trace)
}

/// Dataset collection policy. Uniform gives full (s, a) coverage; greedy
/// narrows the action marginals the way a near-converged controller would.
fn grid_behavior<'a>(
    cfg: &ExperimentConfig,
    qstar: &'a Matrix,
) -> Result<BehaviorPolicy<'a>, ExperimentError> {
    match cfg.get("data.behavior")? {
        "uniform" => Ok(BehaviorPolicy::UniformRandom),
        "greedy" => {
            Ok(BehaviorPolicy::EpsilonGreedy { q: qstar, epsilon: cfg.get_f64("data.epsilon")? })
        }
        other => Err(ExperimentError::Config(format!(
            "key 'data.behavior': '{other}' is not 'uniform' or 'greedy'"
        ))),
    }
}

fn run_grid_offline(cfg: &ExperimentConfig, seed: u64) -> Result<TraceFile, ExperimentError> {
    let setup = grid_setup(cfg)?;
    let seeds = GridSeeds::derive(seed);
    let dataset = collect_dataset(
        &setup.world.mdp,
        &grid_behavior(cfg, &setup.qstar)?,
        cfg.get_usize("data.size")?,
        seeds.dataset,
    )?;
    let net = grid_net(&setup.world, cfg, seeds.net)?;
    let env =
        TrainEnv { mdp: &setup.world.mdp, features: &setup.world.features, qstar: &setup.qstar };
    let tcfg = grid_train_cfg(cfg)?;
    let result = fqi_train(net, env, &dataset, &tcfg, &TargetContext::default(), seeds.train)?;
    grid_trace_file(cfg, seed, &result)
}

fn run_grid_ablations(cfg: &ExperimentConfig, seed: u64) -> Result<TraceFile, ExperimentError> {
    let setup = grid_setup(cfg)?;
    let seeds = GridSeeds::derive(seed);
    let dataset = collect_dataset(
        &setup.world.mdp,
        &grid_behavior(cfg, &setup.qstar)?,
        cfg.get_usize("data.size")?,
        seeds.dataset,
    )?;
    let net = grid_net(&setup.world, cfg, seeds.net)?;
    let env =
        TrainEnv { mdp: &setup.world.mdp, features: &setup.world.features, qstar: &setup.qstar };
    let mut tcfg = grid_train_cfg(cfg)?;
    // Evaluation and Monte-Carlo modes score a fixed near-optimal policy.
    let eval_policy = epsilon_greedy_policy(&setup.qstar, cfg.get_f64("eval.epsilon")?);
    let mode = cfg.get("mode")?;
    let result = match mode {
        "supervised" => {
            tcfg.backup = Backup::SupervisedQstar;
            let ctx = TargetContext { qstar: Some(&setup.qstar), ..TargetContext::default() };
            fqi_train(net, env, &dataset, &tcfg, &ctx, seeds.train)?
        }
        "monte_carlo" => {
            let mc = monte_carlo_targets(
                &setup.world.mdp,
                &eval_policy,
                &dataset,
                cfg.get_usize("mc.horizon")?,
                cfg.get_usize("mc.rollouts")?,
                seeds.rollout,
            )?;
            tcfg.backup = Backup::MonteCarlo;
            let ctx = TargetContext { mc_targets: Some(&mc.mean), ..TargetContext::default() };
            fqi_train(net, env, &dataset, &tcfg, &ctx, seeds.train)?
        }
        "fqe" => {
            tcfg.backup = Backup::Evaluation;
            let ctx = TargetContext { policy: Some(&eval_policy), ..TargetContext::default() };
            fqi_train(net, env, &dataset, &tcfg, &ctx, seeds.train)?
        }
        "reinit" => {
            tcfg.reinit_each_iteration = true;
            fqi_train(net, env, &dataset, &tcfg, &TargetContext::default(), seeds.train)?
        }
        other => {
            return Err(ExperimentError::Config(format!(
                "key 'mode': '{other}' is not one of supervised, monte_carlo, fqe, reinit"
            )))
        }
    };
    grid_trace_file(cfg, seed, &result)
}

fn run_grid_online(cfg: &ExperimentConfig, seed: u64) -> Result<TraceFile, ExperimentError> {
    let setup = grid_setup(cfg)?;
    let seeds = GridSeeds::derive(seed);
    let net = grid_net(&setup.world, cfg, seeds.net)?;
    let env =
        TrainEnv { mdp: &setup.world.mdp, features: &setup.world.features, qstar: &setup.qstar };
    let tcfg = grid_train_cfg(cfg)?;
    let online = OnlineConfig {
        env_steps_per_iteration: cfg.get_usize("online.env_steps_per_iteration")?,
        grad_steps_per_env_step: cfg.get_usize("online.grad_steps_per_env_step")?,
        buffer_capacity: cfg.get_usize("online.buffer_capacity")?,
        epsilon: cfg.get_f64("online.epsilon")?,
    };
    let result =
        fqi_train_online(net, env, &tcfg, &online, &TargetContext::default(), seeds.train)?;
    grid_trace_file(cfg, seed, &result)
}
