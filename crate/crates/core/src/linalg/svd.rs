//! One-sided Jacobi SVD and the effective-rank measure built on it.
//!
//! Jacobi is chosen over bidiagonalization because it keeps full relative
//! accuracy on small singular values; the smallest singular value feeds the
//! spectral penalty and must not be lost to cancellation.

use super::{LinalgError, Matrix};

const MAX_SWEEPS: usize = 128;
/// Convergence threshold on the cosine |a_p . a_q| / (||a_p|| ||a_q||).
const OFFDIAG_TOL: f64 = 1e-12;
/// Column pairs whose norm product sits at round-off scale carry no
/// resolvable direction and are excluded from the convergence measure.
const NEGLIGIBLE_SCALE: f64 = 1e-15;

/// Descending singular values with column-orthonormal singular vector
/// matrices. `m = U diag(sigma) V^T` up to round-off.
#[derive(Debug, Clone)]
pub struct SingularSpectrum {
    pub sigma: Vec<f64>,
    pub left_vectors: Matrix,
    pub right_vectors: Matrix,
}

impl SingularSpectrum {
    /// Sum of all singular values (the nuclear norm).
    pub fn nuclear_norm(&self) -> f64 {
        self.sigma.iter().sum()
    }

    pub fn reconstruct(&self) -> Matrix {
        let m = self.left_vectors.rows();
        let n = self.right_vectors.rows();
        let mut out = Matrix::zeros(m, n);
        for (r, &s) in self.sigma.iter().enumerate() {
            for i in 0..m {
                let ui = self.left_vectors[(i, r)] * s;
                for j in 0..n {
                    out[(i, j)] += ui * self.right_vectors[(j, r)];
                }
            }
        }
        out
    }
}

/// Thin SVD via one-sided Jacobi with column-pair rotations.
///
/// Convergence: the cosine between every column pair below `1e-12`
/// (pairs at round-off scale excluded), hard cap 128 sweeps.
pub fn svd(m: &Matrix) -> Result<SingularSpectrum, LinalgError> {
    m.check_finite()?;
    if m.rows() < m.cols() {
        let t = svd(&m.transpose())?;
        return Ok(SingularSpectrum {
            sigma: t.sigma,
            left_vectors: t.right_vectors,
            right_vectors: t.left_vectors,
        });
    }
    let rows = m.rows();
    let n = m.cols();
    if n == 0 {
        return Ok(SingularSpectrum {
            sigma: vec![],
            left_vectors: Matrix::zeros(rows, 0),
            right_vectors: Matrix::zeros(0, 0),
        });
    }

    // Column-major working copy; rotations touch contiguous memory.
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| (0..rows).map(|i| m[(i, j)]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);
    let negligible = (NEGLIGIBLE_SCALE * scale) * (NEGLIGIBLE_SCALE * scale);
    let mut worst = f64::INFINITY;
    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        worst = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut g) = (0.0, 0.0, 0.0);
                let (cp, cq) = (&a[p], &a[q]);
                for i in 0..rows {
                    alpha += cp[i] * cp[i];
                    beta += cq[i] * cq[i];
                    g += cp[i] * cq[i];
                }
                let denom = (alpha * beta).sqrt();
                if denom <= negligible {
                    continue;
                }
                let cosine = g.abs() / denom;
                worst = worst.max(cosine);
                if cosine <= OFFDIAG_TOL {
                    continue;
                }
                // Rutishauser rotation annihilating the (p, q) Gram entry.
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (ap, aq) = split_pair(&mut a, p, q);
                rotate(ap, aq, c, s);
                let (vp, vq) = split_pair(&mut v, p, q);
                rotate(vp, vq, c, s);
            }
        }
        if worst <= OFFDIAG_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::SvdNonConvergence { sweeps: MAX_SWEEPS, residual: worst });
    }

    // Column norms are the singular values; sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> =
        a.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut sigma = Vec::with_capacity(n);
    let mut u = Matrix::zeros(rows, n);
    let mut vm = Matrix::zeros(n, n);
    let mut zero_cols = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        sigma.push(s);
        if s > 0.0 {
            for i in 0..rows {
                u[(i, dst)] = a[src][i] / s;
            }
        } else {
            zero_cols.push(dst);
        }
        for i in 0..n {
            vm[(i, dst)] = v[src][i];
        }
    }
    if !zero_cols.is_empty() {
        complete_orthonormal(&mut u, &zero_cols);
    }

    Ok(SingularSpectrum { sigma, left_vectors: u, right_vectors: vm })
}

fn split_pair<'a>(cols: &'a mut [Vec<f64>], p: usize, q: usize) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(p < q);
    let (lo, hi) = cols.split_at_mut(q);
    (&mut lo[p], &mut hi[0])
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for i in 0..x.len() {
        let xi = x[i];
        x[i] = c * xi - s * y[i];
        y[i] = s * xi + c * y[i];
    }
}

/// Fill the listed columns of `u` with unit vectors orthogonal to every
/// other column (Gram-Schmidt against the standard basis).
fn complete_orthonormal(u: &mut Matrix, empty: &[usize]) {
    let rows = u.rows();
    let cols = u.cols();
    let mut empty_iter = empty.iter().copied();
    let mut next_empty = empty_iter.next();
    for basis in 0..rows {
        let Some(target) = next_empty else { break };
        let mut cand = vec![0.0; rows];
        cand[basis] = 1.0;
        for j in 0..cols {
            if empty.contains(&j) && j >= target {
                continue;
            }
            let dot: f64 = (0..rows).map(|i| cand[i] * u[(i, j)]).sum();
            for i in 0..rows {
                cand[i] -= dot * u[(i, j)];
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for i in 0..rows {
                u[(i, target)] = cand[i] / norm;
            }
            next_empty = empty_iter.next();
        }
    }
}

/// Effective rank: the smallest k whose top-k singular values carry a
/// 1 - delta fraction of the nuclear norm.
pub fn srank(spec: &SingularSpectrum, delta: f64) -> Result<usize, LinalgError> {
    srank_of_sigma(&spec.sigma, delta)
}

/// Same measure on a bare descending spectrum.
pub fn srank_of_sigma(sigma: &[f64], delta: f64) -> Result<usize, LinalgError> {
    if !(0.0..1.0).contains(&delta) || delta <= 0.0 {
        return Err(LinalgError::InvalidArgument(format!("delta {delta} outside (0,1)")));
    }
    let total: f64 = sigma.iter().sum();
    if total <= 0.0 {
        return Err(LinalgError::ZeroSpectrum);
    }
    let threshold = (1.0 - delta) * total;
    let mut cum = 0.0;
    for (k, s) in sigma.iter().enumerate() {
        cum += s;
        if cum >= threshold {
            return Ok(k + 1);
        }
    }
    Ok(sigma.len())
}
