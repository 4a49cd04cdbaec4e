//! Deep linear networks under discretized gradient flow.
//!
//! The network is `Q(x) = W_N W_phi x` with feature map
//! `W_phi = W_{N-1} ... W_1`. The first `N-1` layers are initialized
//! balanced (`W_{j+1}^T W_{j+1} = W_j W_j^T`), a quantity conserved by the
//! continuous flow and drifting only at `O(eta)` under explicit Euler.
//! Under balancedness the singular values of the feature matrix follow a
//! closed-form ODE, which is what `sigma_dot_predicted` evaluates.

use crate::linalg::{
    random_gaussian, random_orthogonal, srank, svd, LinalgError, Matrix, SingularSpectrum,
};
use crate::rng::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DeepLinearError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("repeated singular value at index {index}; per-value ODE form invalid")]
    RepeatedSingularValue { index: usize },
    #[error("balancedness residual {residual:.3e} too large for the ODE prediction")]
    NotBalanced { residual: f64 },
    #[error("divergence at fitting iteration {iteration}, step {step}")]
    Diverged { iteration: usize, step: usize },
}

/// Linear Q-network `W_N ... W_1` with `d_N = 1`.
#[derive(Debug, Clone)]
pub struct DeepLinearNet {
    layers: Vec<Matrix>,
    dims: Vec<usize>,
}

impl DeepLinearNet {
    pub fn from_layers(layers: Vec<Matrix>) -> Result<Self, DeepLinearError> {
        if layers.len() < 3 {
            return Err(DeepLinearError::DimensionMismatch("need at least 3 layers".into()));
        }
        let mut dims = vec![layers[0].cols()];
        for (i, w) in layers.iter().enumerate() {
            if w.cols() != dims[i] {
                return Err(DeepLinearError::DimensionMismatch(format!(
                    "layer {} has {} input columns, expected {}",
                    i + 1,
                    w.cols(),
                    dims[i]
                )));
            }
            dims.push(w.rows());
        }
        if *dims.last().unwrap() != 1 {
            return Err(DeepLinearError::DimensionMismatch("output dimension must be 1".into()));
        }
        Ok(DeepLinearNet { layers, dims })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layer(&self, j: usize) -> &Matrix {
        &self.layers[j]
    }

    pub fn last_layer(&self) -> &Matrix {
        self.layers.last().unwrap()
    }

    /// Feature map `W_phi = W_{N-1} ... W_1`.
    pub fn feature_matrix(&self) -> Matrix {
        let mut m = self.layers[0].clone();
        for w in &self.layers[1..self.layers.len() - 1] {
            m = w.matmul(&m);
        }
        m
    }

    /// End-to-end map `W_N W_phi`, shape `1 x d_0`.
    pub fn end_to_end(&self) -> Matrix {
        self.last_layer().matmul(&self.feature_matrix())
    }

    /// Worst balancedness defect over the first `N-1` layers.
    pub fn balancedness_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.layers.len() - 2 {
            let a = &self.layers[j + 1];
            let b = &self.layers[j];
            let lhs = a.transpose().matmul(a);
            let rhs = b.matmul(&b.transpose());
            worst = worst.max(lhs.sub(&rhs).frobenius_norm());
        }
        worst
    }

    /// Per-layer loss gradients given the end-to-end gradient `g = dL/dW_{N:1}`
    /// (shape `1 x d_0`): layer j receives `(W_N..W_{j+1})^T g (W_{j-1}..W_1)^T`.
    pub fn layer_gradients(&self, end_to_end_grad: &Matrix) -> Vec<Matrix> {
        let n = self.layers.len();
        // prefix[j] = W_j ... W_1 (prefix[0] = I), suffix[j] = W_N ... W_{j+1}.
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(Matrix::identity(self.dims[0]));
        for (j, w) in self.layers.iter().enumerate() {
            prefix.push(w.matmul(&prefix[j]));
        }
        let mut suffix = vec![Matrix::identity(1); n + 1];
        for j in (0..n).rev() {
            suffix[j] = suffix[j + 1].matmul(&self.layers[j]);
        }
        (0..n)
            .map(|j| {
                suffix[j + 1]
                    .transpose()
                    .matmul(end_to_end_grad)
                    .matmul(&prefix[j].transpose())
            })
            .collect()
    }

    /// One explicit Euler step `W_j <- W_j - eta * dL/dW_j`, all layers
    /// updated from the pre-step weights.
    pub fn flow_step(
        &self,
        end_to_end_grad: &Matrix,
        eta: f64,
    ) -> Result<DeepLinearNet, DeepLinearError> {
        let grads = self.layer_gradients(end_to_end_grad);
        let layers: Vec<Matrix> = self
            .layers
            .iter()
            .zip(&grads)
            .map(|(w, g)| w.sub(&g.scale(eta)))
            .collect();
        if layers.iter().any(|w| !w.is_finite()) {
            return Err(DeepLinearError::Diverged { iteration: 0, step: 0 });
        }
        Ok(DeepLinearNet { layers, dims: self.dims.clone() })
    }
}

/// Balanced initialization: `W_j = O_j diag(sigma) O_{j-1}^T` with seeded
/// column-orthonormal factors, so balancedness holds exactly at `t = 0`.
/// The last layer is small random (`0.1 / sqrt(d_{N-1})`); balancing it too
/// would pin the whole network to rank one.
pub fn balanced_init(
    dims: &[usize],
    sigma: &[f64],
    seed: u64,
) -> Result<DeepLinearNet, DeepLinearError> {
    let mut rng = Rng::new(seed);
    let n = dims.len().checked_sub(1).unwrap_or(0);
    if n < 3 {
        return Err(DeepLinearError::DimensionMismatch("need at least 3 layers".into()));
    }
    if *dims.last().unwrap() != 1 {
        return Err(DeepLinearError::DimensionMismatch("output dimension must be 1".into()));
    }
    let min_dim = dims[..n].iter().copied().min().unwrap();
    if sigma.is_empty() || sigma.len() > min_dim {
        return Err(DeepLinearError::DimensionMismatch(format!(
            "sigma length {} must be in 1..={min_dim}",
            sigma.len()
        )));
    }
    if sigma.iter().any(|&s| s <= 0.0) {
        return Err(DeepLinearError::DimensionMismatch("sigma entries must be positive".into()));
    }
    let factors: Vec<Matrix> =
        (0..n).map(|j| random_orthogonal(dims[j], sigma.len(), &mut rng)).collect();
    let diag = Matrix::diag(sigma);
    let mut layers: Vec<Matrix> = (1..n)
        .map(|j| factors[j].matmul(&diag).matmul(&factors[j - 1].transpose()))
        .collect();
    let scale = 0.1 / (dims[n - 1] as f64).sqrt();
    layers.push(random_gaussian(1, dims[n - 1], &mut rng).scale(scale));
    DeepLinearNet::from_layers(layers)
}

/// Predicted instantaneous rate of change of the r-th singular value of the
/// feature matrix under the balanced flow:
/// `-(N-1) (sigma_r^2)^{1 - 1/(N-1)} <W_N^T g, u_r v_r^T>`.
///
/// Derived by composing the per-layer flow under balancedness; the
/// `N-1` factor is the depth of the feature map (the part of the network
/// the balancedness assumption covers), which is also what the
/// finite-difference oracle confirms.
pub fn sigma_dot_predicted(
    net: &DeepLinearNet,
    end_to_end_grad: &Matrix,
    r: usize,
) -> Result<f64, DeepLinearError> {
    let residual = net.balancedness_residual();
    if residual > 1e-6 {
        return Err(DeepLinearError::NotBalanced { residual });
    }
    let w_phi = net.feature_matrix();
    let spec = svd(&w_phi)?;
    let sigma = &spec.sigma;
    if r >= sigma.len() {
        return Err(DeepLinearError::DimensionMismatch(format!(
            "singular value index {r} out of range"
        )));
    }
    let gap_ok = (r == 0 || sigma[r - 1] - sigma[r] >= 1e-8)
        && (r + 1 >= sigma.len() || sigma[r] - sigma[r + 1] >= 1e-8);
    if !gap_ok {
        return Err(DeepLinearError::RepeatedSingularValue { index: r });
    }
    let depth = (net.depth() - 1) as f64;
    let e = net.last_layer().transpose().matmul(end_to_end_grad);
    // <E, u_r v_r^T> = u_r^T E v_r.
    let rows = e.rows();
    let cols = e.cols();
    let mut inner = 0.0;
    for i in 0..rows {
        let u = spec.left_vectors[(i, r)];
        for j in 0..cols {
            inner += u * e[(i, j)] * spec.right_vectors[(j, r)];
        }
    }
    let power = (sigma[r] * sigma[r]).powf(1.0 - 1.0 / depth);
    Ok(-depth * power * inner)
}

/// Threshold on the max-abs entry of a feature perturbation `zeta` below
/// which the effective rank of `W_phi + zeta` provably cannot move:
/// `(sum_{j<=r} sigma_j - (1 - delta) sum_j sigma_j) / (r + d)`.
pub fn zeta_threshold(spectrum: &SingularSpectrum, delta: f64) -> Result<f64, DeepLinearError> {
    let r = srank(spectrum, delta)?;
    if r <= 1 {
        return Err(DeepLinearError::DimensionMismatch(
            "rank-stability bound assumes effective rank > 1".into(),
        ));
    }
    let d = spectrum.sigma.len();
    let top: f64 = spectrum.sigma[..r].iter().sum();
    let total: f64 = spectrum.sigma.iter().sum();
    Ok((top - (1.0 - delta) * total) / (r + d) as f64)
}

/// Target-closeness radius from the rank-collapse-near-fixed-point bound:
/// `||W_N||_inf` times the zeta threshold of the feature spectrum.
/// Nonnegative whenever the effective rank is well defined.
pub fn epsilon_zero_bound(
    w_last: &Matrix,
    spectrum: &SingularSpectrum,
    delta: f64,
) -> Result<f64, DeepLinearError> {
    Ok(w_last.inf_norm() * zeta_threshold(spectrum, delta)?)
}

/// Flow schedule for linear fitted Q-iteration.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Euler step size.
    pub step: f64,
    /// Gradient steps per fitting iteration.
    pub steps_per_iteration: usize,
    pub fitting_iterations: usize,
    pub discount: f64,
    /// Record spectrum every this many steps (and at iteration boundaries).
    pub svd_trace_stride: usize,
    pub srank_delta: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            step: 1e-4,
            steps_per_iteration: 100,
            fitting_iterations: 10,
            discount: 0.95,
            svd_trace_stride: 20,
            srank_delta: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearTargetMode {
    /// Policy-evaluation backup `y = R + gamma P Q_prev`.
    Bootstrap,
    /// Degenerate self-regression `y = Q_prev`.
    SelfTraining,
}

/// Fixed evaluation problem for the linear network: input columns (one per
/// state-action pair), the pair-level transition operator and rewards.
#[derive(Debug, Clone)]
pub struct LinearFqiInputs {
    /// `d_0 x n` matrix of input columns `[s; a]`.
    pub inputs: Matrix,
    /// `n x n` row-stochastic transition over pairs.
    pub transition: Matrix,
    pub reward: Vec<f64>,
}

impl LinearFqiInputs {
    /// One-hot input columns, which make the full-column-rank precondition
    /// hold by construction.
    pub fn one_hot(transition: Matrix, reward: Vec<f64>) -> Self {
        let n = reward.len();
        LinearFqiInputs { inputs: Matrix::identity(n), transition, reward }
    }
}

#[derive(Debug, Clone)]
pub struct LinearTracePoint {
    pub iteration: usize,
    pub step: usize,
    pub srank: usize,
    pub sigma: Vec<f64>,
    pub td_error: f64,
    pub balancedness: f64,
}

#[derive(Debug, Clone)]
pub struct LinearRankTrace {
    pub points: Vec<LinearTracePoint>,
    pub diverged: bool,
    pub final_net: DeepLinearNet,
}

/// Run fitted Q-iteration with the linear network: `K` iterations of `T`
/// Euler steps on the squared TD loss against targets frozen from the
/// previous iterate.
pub fn run_linear_fqi(
    net: &DeepLinearNet,
    io: &LinearFqiInputs,
    cfg: &FlowConfig,
    mode: LinearTargetMode,
) -> Result<LinearRankTrace, DeepLinearError> {
    let n = io.reward.len();
    if io.inputs.cols() != n || io.transition.rows() != n || io.transition.cols() != n {
        return Err(DeepLinearError::DimensionMismatch(
            "inputs, transition and reward sizes must agree".into(),
        ));
    }
    let x = &io.inputs;
    let xt = x.transpose();
    let mut current = net.clone();
    let mut points = Vec::new();
    let mut diverged = false;

    'outer: for k in 0..cfg.fitting_iterations {
        // Freeze targets from the previous iterate.
        let q_prev = current.end_to_end().matmul(x); // 1 x n
        let targets: Vec<f64> = match mode {
            LinearTargetMode::SelfTraining => (0..n).map(|i| q_prev[(0, i)]).collect(),
            LinearTargetMode::Bootstrap => {
                let q_vec: Vec<f64> = (0..n).map(|i| q_prev[(0, i)]).collect();
                let pq = io.transition.matvec(&q_vec);
                io.reward.iter().zip(&pq).map(|(r, v)| r + cfg.discount * v).collect()
            }
        };
        for t in 0..cfg.steps_per_iteration {
            let pred = current.end_to_end().matmul(x);
            let mut resid = Matrix::zeros(1, n);
            let mut sq = 0.0;
            for i in 0..n {
                let d = pred[(0, i)] - targets[i];
                resid[(0, i)] = d;
                sq += d * d;
            }
            let td_error = sq / n as f64;
            if !td_error.is_finite() {
                diverged = true;
                break 'outer;
            }
            if t % cfg.svd_trace_stride == 0 {
                let w_phi = current.feature_matrix();
                let spec = svd(&w_phi)?;
                points.push(LinearTracePoint {
                    iteration: k,
                    step: t,
                    srank: srank(&spec, cfg.srank_delta)?,
                    sigma: spec.sigma,
                    td_error,
                    balancedness: current.balancedness_residual(),
                });
            }
            let grad = resid.scale(2.0).matmul(&xt);
            current = current.flow_step(&grad, cfg.step).map_err(|e| match e {
                DeepLinearError::Diverged { .. } => {
                    DeepLinearError::Diverged { iteration: k, step: t }
                }
                other => other,
            })?;
        }
    }
    Ok(LinearRankTrace { points, diverged, final_net: current })
}
