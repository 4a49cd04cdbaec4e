//! Seeded random matrix generators: Gaussian, orthogonal (QR of Gaussian),
//! and symmetric PSD with a chosen or random spectrum.

use super::Matrix;
use crate::rng::Rng;

pub fn random_gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let entries = (0..rows * cols).map(|_| rng.next_gaussian()).collect();
    Matrix::new(rows, cols, entries).expect("gaussian draws are finite")
}

/// Column-orthonormal `rows x cols` matrix (`cols <= rows`) via modified
/// Gram-Schmidt on a Gaussian draw, with one re-orthogonalization pass.
pub fn random_orthogonal(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    assert!(cols <= rows, "need cols <= rows for orthonormal columns");
    let g = random_gaussian(rows, cols, rng);
    let mut cols_vec: Vec<Vec<f64>> =
        (0..cols).map(|j| (0..rows).map(|i| g[(i, j)]).collect()).collect();
    for j in 0..cols {
        for _pass in 0..2 {
            for k in 0..j {
                let dot: f64 = (0..rows).map(|i| cols_vec[j][i] * cols_vec[k][i]).sum();
                for i in 0..rows {
                    cols_vec[j][i] -= dot * cols_vec[k][i];
                }
            }
        }
        let norm = cols_vec[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        // A Gaussian draw is almost surely full rank; a degenerate column
        // would only appear through astronomically unlikely cancellation.
        assert!(norm > 1e-12, "degenerate Gram-Schmidt column");
        for x in cols_vec[j].iter_mut() {
            *x /= norm;
        }
    }
    let mut q = Matrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            q[(i, j)] = cols_vec[j][i];
        }
    }
    q
}

/// Symmetric PSD matrix `Q diag(spectrum) Q^T` with the given eigenvalues.
pub fn random_psd_with_spectrum(spectrum: &[f64], rng: &mut Rng) -> Matrix {
    assert!(spectrum.iter().all(|&v| v >= 0.0));
    let n = spectrum.len();
    let q = random_orthogonal(n, n, rng);
    let qt = q.transpose();
    q.matmul(&Matrix::diag(spectrum)).matmul(&qt)
}

/// Symmetric PSD matrix with uniform eigenvalues in (0, max_eigenvalue],
/// all distinct by construction.
pub fn random_psd(n: usize, max_eigenvalue: f64, rng: &mut Rng) -> Matrix {
    // Distinct, strictly positive, spread across the range.
    let mut spectrum: Vec<f64> = (0..n)
        .map(|i| max_eigenvalue * (0.05 + 0.95 * (i as f64 + rng.next_f64()) / n as f64))
        .collect();
    spectrum.sort_by(|a, b| b.partial_cmp(a).unwrap());
    random_psd_with_spectrum(&spectrum, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_columns_are_orthonormal() {
        let mut rng = Rng::new(11);
        let q = random_orthogonal(20, 8, &mut rng);
        let gram = q.transpose().matmul(&q);
        assert!(gram.sub(&Matrix::identity(8)).frobenius_norm() < 1e-12);
    }

    #[test]
    fn psd_is_symmetric_with_given_spectrum() {
        let mut rng = Rng::new(13);
        let spectrum = [3.0, 1.5, 0.2];
        let m = random_psd_with_spectrum(&spectrum, &mut rng);
        assert!(m.sub(&m.transpose()).frobenius_norm() < 1e-12);
        let spec = crate::linalg::svd(&m).unwrap();
        for (a, b) in spec.sigma.iter().zip(spectrum.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn same_seed_same_matrix() {
        let a = random_gaussian(5, 5, &mut Rng::new(99));
        let b = random_gaussian(5, 5, &mut Rng::new(99));
        assert_eq!(a, b);
    }
}
