//! LU solve with partial pivoting and the geometric power-sum recurrence.

use super::{LinalgError, Matrix};

const PIVOT_TOL: f64 = 1e-12;

/// Solve `a x = b` for square `a` by LU with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.rows() != a.cols() {
        return Err(LinalgError::DimensionMismatch(format!(
            "solve needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if a.rows() != b.rows() {
        return Err(LinalgError::DimensionMismatch(format!(
            "rhs has {} rows, expected {}",
            b.rows(),
            a.rows()
        )));
    }
    a.check_finite()?;
    b.check_finite()?;

    let n = a.rows();
    let nrhs = b.cols();
    let mut lu = a.clone();
    let mut x = b.clone();

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot = lu[(col, col)].abs();
        for r in col + 1..n {
            let v = lu[(r, col)].abs();
            if v > pivot {
                pivot = v;
                pivot_row = r;
            }
        }
        if pivot < PIVOT_TOL {
            return Err(LinalgError::SingularMatrix { pivot, col });
        }
        if pivot_row != col {
            for j in 0..n {
                let t = lu[(col, j)];
                lu[(col, j)] = lu[(pivot_row, j)];
                lu[(pivot_row, j)] = t;
            }
            for j in 0..nrhs {
                let t = x[(col, j)];
                x[(col, j)] = x[(pivot_row, j)];
                x[(pivot_row, j)] = t;
            }
        }
        let d = lu[(col, col)];
        for r in col + 1..n {
            let factor = lu[(r, col)] / d;
            if factor == 0.0 {
                continue;
            }
            lu[(r, col)] = 0.0;
            for j in col + 1..n {
                lu[(r, j)] -= factor * lu[(col, j)];
            }
            for j in 0..nrhs {
                x[(r, j)] -= factor * x[(col, j)];
            }
        }
    }
    // Back substitution.
    for col in (0..n).rev() {
        let d = lu[(col, col)];
        for j in 0..nrhs {
            let mut v = x[(col, j)];
            for k in col + 1..n {
                v -= lu[(col, k)] * x[(k, j)];
            }
            x[(col, j)] = v / d;
        }
    }
    Ok(x)
}

/// Geometric power sum `I + S + S^2 + ... + S^(k-1)` accumulated by the
/// two-term recurrence `M_1 = I`, `M_{j+1} = I + S M_j`.
pub fn matrix_power_sum(s: &Matrix, k: usize) -> Result<Matrix, LinalgError> {
    if s.rows() != s.cols() {
        return Err(LinalgError::DimensionMismatch("power sum needs a square matrix".into()));
    }
    if k == 0 {
        return Err(LinalgError::InvalidArgument("power sum needs k >= 1".into()));
    }
    s.check_finite()?;
    let identity = Matrix::identity(s.rows());
    let mut m = identity.clone();
    for _ in 1..k {
        m = identity.add(&s.matmul(&m));
    }
    m.check_finite()?;
    Ok(m)
}
