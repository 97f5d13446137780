mod common;

use common::*;
use fedtherm_core::linalg::{cholesky_solve, generalized_eigh, jacobi_eigh, Cholesky};
use fedtherm_core::Matrix;
use proptest::prelude::*;

fn reconstruction_error(a: &Matrix) -> (f64, f64) {
    let eig = jacobi_eigh(a).unwrap();
    let v = &eig.vectors;
    let vl = Matrix::from_fn(v.rows(), v.cols(), |i, j| v[(i, j)] * eig.values[j]);
    let rebuilt = vl.matmul_transposed(v).unwrap();
    let recon = a.sub(&rebuilt).unwrap().frobenius_norm() / a.frobenius_norm().max(f64::MIN_POSITIVE);
    let gram = v.transposed_matmul(v).unwrap();
    let ortho = max_abs_diff(&gram, &Matrix::identity(v.rows()));
    (recon, ortho)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobi_reconstructs_symmetric_matrices(n in 1usize..24, seed in any::<u64>()) {
        let a = random_symmetric(n, &mut rng(seed));
        let (recon, ortho) = reconstruction_error(&a);
        prop_assert!(recon <= 1e-8, "reconstruction {recon}");
        prop_assert!(ortho <= 1e-8, "orthogonality {ortho}");
    }

    #[test]
    fn eigenvalues_come_out_descending(n in 1usize..16, seed in any::<u64>()) {
        let eig = jacobi_eigh(&random_symmetric(n, &mut rng(seed))).unwrap();
        prop_assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn cholesky_solves_spd_systems(n in 1usize..20, k in 1usize..4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_spd(n, &mut r);
        let b = random_matrix(n, k, 3.0, &mut r);
        let x = cholesky_solve(&a, &b).unwrap();
        let residual = max_abs_diff(&a.matmul(&x).unwrap(), &b);
        prop_assert!(residual <= 1e-9 * (1.0 + b.max_abs()), "residual {residual}");
        let l = Cholesky::factor(&a).unwrap();
        let llt = l.lower().matmul_transposed(l.lower()).unwrap();
        prop_assert!(max_abs_diff(&llt, &a) <= 1e-10 * a.max_abs());
    }

    #[test]
    fn generalized_pairs_satisfy_the_pencil(n in 2usize..16, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_symmetric(n, &mut r);
        let b = random_spd(n, &mut r);
        let m = 1 + (seed as usize % n);
        let g = generalized_eigh(&a, &b, m).unwrap();
        let aw = a.matmul(&g.vectors).unwrap();
        let bw = b.matmul(&g.vectors).unwrap();
        for j in 0..m {
            for i in 0..n {
                let res = aw[(i, j)] - g.values[j] * bw[(i, j)];
                prop_assert!(res.abs() <= 1e-7 * (1.0 + a.max_abs() + b.max_abs()), "residual {res}");
            }
        }
        // B-orthonormal columns.
        let gram = g.vectors.transposed_matmul(&bw).unwrap();
        prop_assert!(max_abs_diff(&gram, &Matrix::identity(m)) <= 1e-8);
    }
}

#[test]
fn diagonal_pencil_picks_the_largest_ratio() {
    let a = Matrix::from_diag(&[5.0, 1.0]);
    let b = Matrix::identity(2);
    let g = generalized_eigh(&a, &b, 1).unwrap();
    assert!((g.values[0] - 5.0).abs() < 1e-12);
    assert!((g.vectors[(0, 0)].abs() - 1.0).abs() < 1e-12);
    assert!(g.vectors[(1, 0)].abs() < 1e-12);
}

#[test]
fn non_definite_matrix_is_rejected() {
    let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
    assert!(Cholesky::factor(&a).is_err());
}
