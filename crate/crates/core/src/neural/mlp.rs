//! Two-hidden-layer rectifier network over a flat parameter vector, with
//! exact batch backpropagation and an Adam optimizer.

use crate::linalg::Matrix;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// Q-network `input -> h1 -> h2 -> n_actions` with rectified-linear hidden
/// activations and a linear output head. The post-activation second hidden
/// layer is the feature map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    dims: [usize; 4],
    /// Layout: w1 (h1 x in), b1, w2 (h2 x h1), b2, w3 (out x h2), b3.
    params: Vec<f64>,
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl Mlp {
    pub fn n_params_for(dims: [usize; 4]) -> usize {
        let [i, h1, h2, o] = dims;
        h1 * i + h1 + h2 * h1 + h2 + o * h2 + o
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Mlp { dims, params: vec![0.0; Self::n_params_for(dims)] }
    }

    /// Fan-in scaled Gaussian weights (variance 2/fan_in), zero biases.
    pub fn he_init(dims: [usize; 4], rng: &mut Rng) -> Self {
        let mut net = Self::zeros(dims);
        let [i, h1, h2, _o] = dims;
        let fan_in = [i, h1, h2];
        for layer in 0..3 {
            let (off, rows, cols) = net.weight_block(layer);
            let scale = (2.0 / fan_in[layer] as f64).sqrt();
            for k in 0..rows * cols {
                net.params[off + k] = scale * rng.next_gaussian();
            }
        }
        net
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn n_actions(&self) -> usize {
        self.dims[3]
    }

    pub fn feature_dim(&self) -> usize {
        self.dims[2]
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// (offset, rows, cols) of the weight matrix of `layer` in 0..3.
    fn weight_block(&self, layer: usize) -> (usize, usize, usize) {
        let [i, h1, h2, o] = self.dims;
        match layer {
            0 => (0, h1, i),
            1 => (h1 * i + h1, h2, h1),
            _ => (h1 * i + h1 + h2 * h1 + h2, o, h2),
        }
    }

    /// Offset of the bias vector of `layer`.
    fn bias_block(&self, layer: usize) -> (usize, usize) {
        let (off, rows, cols) = self.weight_block(layer);
        (off + rows * cols, rows)
    }

    /// Forward pass for a batch of input rows; all intermediate activations
    /// are kept for the backward pass.
    pub fn forward_batch(&self, x: &Matrix) -> BatchCache {
        assert_eq!(x.cols(), self.dims[0], "input width mismatch");
        let b = x.rows();
        let [_, h1, h2, o] = self.dims;
        let mut z1 = Matrix::zeros(b, h1);
        let mut a1 = Matrix::zeros(b, h1);
        let mut z2 = Matrix::zeros(b, h2);
        let mut a2 = Matrix::zeros(b, h2);
        let mut q = Matrix::zeros(b, o);
        let (w1, r1, c1) = self.weight_block(0);
        let (bo1, _) = self.bias_block(0);
        let (w2, r2, c2) = self.weight_block(1);
        let (bo2, _) = self.bias_block(1);
        let (w3, r3, c3) = self.weight_block(2);
        let (bo3, _) = self.bias_block(2);
        for s in 0..b {
            for i in 0..r1 {
                let mut v = self.params[bo1 + i];
                let row = w1 + i * c1;
                for j in 0..c1 {
                    v += self.params[row + j] * x[(s, j)];
                }
                z1[(s, i)] = v;
                a1[(s, i)] = relu(v);
            }
            for i in 0..r2 {
                let mut v = self.params[bo2 + i];
                let row = w2 + i * c2;
                for j in 0..c2 {
                    v += self.params[row + j] * a1[(s, j)];
                }
                z2[(s, i)] = v;
                a2[(s, i)] = relu(v);
            }
            for i in 0..r3 {
                let mut v = self.params[bo3 + i];
                let row = w3 + i * c3;
                for j in 0..c3 {
                    v += self.params[row + j] * a2[(s, j)];
                }
                q[(s, i)] = v;
            }
        }
        BatchCache { z1, a1, z2, a2, q }
    }

    /// Q-values and features for one input row.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let input = Matrix::new(1, x.len(), x.to_vec()).expect("finite input");
        let cache = self.forward_batch(&input);
        let q = (0..self.dims[3]).map(|a| cache.q[(0, a)]).collect();
        let feat = (0..self.dims[2]).map(|j| cache.a2[(0, j)]).collect();
        (q, feat)
    }

    /// Backpropagate `d_q` (gradient of the loss in the output, one row per
    /// batch sample) and an optional extra gradient arriving directly at the
    /// feature layer. Returns the full flat parameter gradient.
    pub fn backward(&self, x: &Matrix, cache: &BatchCache, d_q: &Matrix, d_features: Option<&Matrix>) -> Vec<f64> {
        let b = x.rows();
        let [_, h1, h2, o] = self.dims;
        assert_eq!(d_q.rows(), b);
        assert_eq!(d_q.cols(), o);
        let mut grad = vec![0.0; self.params.len()];
        let (w2o, _, _) = self.weight_block(1);
        let (w3o, _, _) = self.weight_block(2);
        let (g_w1, r1, c1) = self.weight_block(0);
        let (g_b1, _) = self.bias_block(0);
        let (g_w2, r2, c2) = self.weight_block(1);
        let (g_b2, _) = self.bias_block(1);
        let (g_w3, r3, c3) = self.weight_block(2);
        let (g_b3, _) = self.bias_block(2);
        let mut d_a2 = vec![0.0; h2];
        let mut d_a1 = vec![0.0; h1];
        for s in 0..b {
            // Output layer.
            for i in 0..r3 {
                let g = d_q[(s, i)];
                if g != 0.0 {
                    grad[g_b3 + i] += g;
                    let row = g_w3 + i * c3;
                    for j in 0..c3 {
                        grad[row + j] += g * cache.a2[(s, j)];
                    }
                }
            }
            for j in 0..h2 {
                let mut v = 0.0;
                for i in 0..r3 {
                    let g = d_q[(s, i)];
                    if g != 0.0 {
                        v += self.params[w3o + i * c3 + j] * g;
                    }
                }
                if let Some(extra) = d_features {
                    v += extra[(s, j)];
                }
                d_a2[j] = v;
            }
            // Second hidden layer.
            for i in 0..r2 {
                let dz = if cache.z2[(s, i)] > 0.0 { d_a2[i] } else { 0.0 };
                d_a2[i] = dz;
                if dz != 0.0 {
                    grad[g_b2 + i] += dz;
                    let row = g_w2 + i * c2;
                    for j in 0..c2 {
                        grad[row + j] += dz * cache.a1[(s, j)];
                    }
                }
            }
            for j in 0..h1 {
                let mut v = 0.0;
                for i in 0..r2 {
                    let dz = d_a2[i];
                    if dz != 0.0 {
                        v += self.params[w2o + i * c2 + j] * dz;
                    }
                }
                d_a1[j] = v;
            }
            // First hidden layer.
            for i in 0..r1 {
                let dz = if cache.z1[(s, i)] > 0.0 { d_a1[i] } else { 0.0 };
                if dz != 0.0 {
                    grad[g_b1 + i] += dz;
                    let row = g_w1 + i * c1;
                    for j in 0..c1 {
                        grad[row + j] += dz * x[(s, j)];
                    }
                }
            }
        }
        grad
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Intermediate activations of one batch forward pass.
#[derive(Debug, Clone)]
pub struct BatchCache {
    pub z1: Matrix,
    pub a1: Matrix,
    pub z2: Matrix,
    /// Post-activation features, one row per sample.
    pub a2: Matrix,
    pub q: Matrix,
}

/// Adam with the standard bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
