//! Randomized invariants for the linear algebra layer.

use proptest::prelude::*;
use sranklab::linalg::{srank_of_sigma, svd, Matrix};

fn spectrum() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1e3, 2..40).prop_map(|mut v| {
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn srank_is_scale_invariant(sigma in spectrum(), scale in 1e-4f64..1e4) {
        let scaled: Vec<f64> = sigma.iter().map(|s| s * scale).collect();
        prop_assert_eq!(
            srank_of_sigma(&sigma, 0.01).unwrap(),
            srank_of_sigma(&scaled, 0.01).unwrap()
        );
    }

    #[test]
    fn srank_shrinks_as_delta_grows(sigma in spectrum(), lo in 1e-4f64..0.2, hi in 0.2f64..0.9) {
        prop_assert!(
            srank_of_sigma(&sigma, lo).unwrap() >= srank_of_sigma(&sigma, hi).unwrap()
        );
    }

    #[test]
    fn srank_bounded_by_length(sigma in spectrum()) {
        let r = srank_of_sigma(&sigma, 0.01).unwrap();
        prop_assert!(r >= 1 && r <= sigma.len());
    }

    #[test]
    fn svd_reconstructs_the_matrix(
        data in prop::collection::vec(-10.0f64..10.0, 1..36),
        rows in 1usize..6,
    ) {
        let cols = data.len() / rows;
        prop_assume!(cols >= 1);
        let m = Matrix::new(rows, cols, data[..rows * cols].to_vec()).unwrap();
        let spec = svd(&m).unwrap();
        // U diag(sigma) V^T == M entrywise.
        let back = spec.reconstruct();
        for r in 0..rows {
            for c in 0..cols {
                prop_assert!(
                    (back[(r, c)] - m[(r, c)]).abs() <= 1e-9 * (1.0 + m[(r, c)].abs())
                );
            }
        }
        // Singular values descend and are nonnegative.
        for w in spec.sigma.windows(2) {
            prop_assert!(w[0] >= w[1] && w[1] >= 0.0);
        }
    }
}
