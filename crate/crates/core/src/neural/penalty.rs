//! Singular-value spread penalty on a batch feature matrix, plus the
//! Gram-route effective-rank measurement used by the trainers.

use crate::linalg::{srank_of_sigma, svd, LinalgError, Matrix};

/// Singular values of `phi` via the eigenvalues of the small Gram matrix
/// `phi^T phi`, together with the right singular vectors. Much cheaper than
/// a direct decomposition when the batch is tall.
fn gram_spectrum(phi: &Matrix) -> Result<(Vec<f64>, Matrix), LinalgError> {
    let gram = phi.transpose().matmul(phi);
    let spec = svd(&gram)?;
    // Gram eigenvalues are the squared singular values of phi.
    let sigma = spec.sigma.iter().map(|&v| v.max(0.0).sqrt()).collect();
    Ok((sigma, spec.right_vectors))
}

/// Effective rank of a feature batch at threshold `delta`.
pub fn feature_srank(phi: &Matrix, delta: f64) -> Result<usize, LinalgError> {
    let (sigma, _) = gram_spectrum(phi)?;
    srank_of_sigma(&sigma, delta)
}

/// Penalty `sigma_max^2 - sigma_min^2` of the batch feature matrix and its
/// gradient with respect to the features, treating the singular vectors as
/// constants of the batch. `sigma_min` is the smallest of the
/// `min(rows, cols)` singular values. A near-degenerate spread
/// (gap <= 1e-10) gets a zero gradient.
pub fn lp_penalty(phi: &Matrix) -> Result<(f64, Matrix), LinalgError> {
    if phi.rows() == 0 || phi.cols() == 0 {
        return Err(LinalgError::InvalidArgument("empty feature batch".into()));
    }
    if phi.rows() >= phi.cols() {
        let (sigma, v) = gram_spectrum(phi)?;
        lp_penalty_tall(phi, &sigma, &v)
    } else {
        // Wide batch: identical value, gradient via the transpose.
        let t = phi.transpose();
        let (sigma, u) = gram_spectrum(&t)?;
        let (value, grad_t) = lp_penalty_tall(&t, &sigma, &u)?;
        Ok((value, grad_t.transpose()))
    }
}

/// Gradient for a tall batch: `2 phi (v_1 v_1^T - v_d v_d^T)`, which equals
/// `2 sigma_1 u_1 v_1^T - 2 sigma_d u_d v_d^T` without dividing by a
/// possibly tiny sigma_d.
fn lp_penalty_tall(
    phi: &Matrix,
    sigma: &[f64],
    v: &Matrix,
) -> Result<(f64, Matrix), LinalgError> {
    let d = sigma.len();
    let value = sigma[0] * sigma[0] - sigma[d - 1] * sigma[d - 1];
    let mut grad = Matrix::zeros(phi.rows(), phi.cols());
    if sigma[0] - sigma[d - 1] > 1e-10 {
        let rows = phi.rows();
        let cols = phi.cols();
        // phi v for the extreme right singular vectors.
        for (col, sign) in [(0usize, 2.0), (d - 1, -2.0)] {
            let mut pv = vec![0.0; rows];
            for i in 0..rows {
                let mut acc = 0.0;
                for j in 0..cols {
                    acc += phi[(i, j)] * v[(j, col)];
                }
                pv[i] = acc;
            }
            for i in 0..rows {
                for j in 0..cols {
                    grad[(i, j)] += sign * pv[i] * v[(j, col)];
                }
            }
        }
    }
    Ok((value, grad))
}
