mod common;

use common::{random_matrix, rng};
use dtf_core::linalg::{gram, solve_cg, solve_pcg, solve_spd, solve_spd_vec, DenseMatrix, SpdSystem};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn random_spd(seed: u64, n: usize) -> DenseMatrix {
    let mut r = rng(seed);
    let x = random_matrix(&mut r, n, n, 1.0);
    let mut lhs = gram(&x);
    lhs.add_to_diagonal(0.5);
    lhs
}

#[test]
fn spd_solve_matches_explicit_inverse() {
    let lhs = random_spd(11, 8);
    let mut r = rng(12);
    let rhs = random_matrix(&mut r, 8, 1, 1.0);
    let x = solve_spd(&lhs, &rhs).unwrap();
    let inv = to_na(&lhs).try_inverse().unwrap();
    let expected = inv * to_na(&rhs);
    for i in 0..8 {
        assert!((x[(i, 0)] - expected[(i, 0)]).abs() < 1e-8);
    }
}

#[test]
fn spd_residual_is_small() {
    let lhs = random_spd(3, 6);
    let mut r = rng(4);
    let rhs = random_matrix(&mut r, 6, 3, 2.0);
    let system = SpdSystem::new(lhs.clone(), rhs.clone()).unwrap();
    let x = system.solve().unwrap();
    let residual = lhs.matmul(&x).unwrap().sub(&rhs).unwrap().frobenius_norm();
    assert!(residual <= 1e-9 * (1.0 + rhs.frobenius_norm()));
}

#[test]
fn asymmetric_system_is_rejected() {
    let lhs = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]).unwrap();
    assert!(SpdSystem::new(lhs, DenseMatrix::column(&[1.0, 1.0])).is_err());
}

#[test]
fn gram_matches_triple_loop() {
    let mut r = rng(5);
    let m = random_matrix(&mut r, 5, 2, 1.0);
    let g = gram(&m);
    for a in 0..2 {
        for b in 0..2 {
            let mut s = 0.0;
            for i in 0..5 {
                s += m[(i, a)] * m[(i, b)];
            }
            assert!((g[(a, b)] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn cg_agrees_with_cholesky() {
    let lhs = random_spd(21, 7);
    let mut r = rng(22);
    let rhs = random_matrix(&mut r, 7, 2, 1.0);
    let exact = solve_spd(&lhs, &rhs).unwrap();
    let out = solve_cg(|x| lhs.matmul(x).unwrap(), &rhs, None, 1e-10, 500).unwrap();
    assert!(out.converged);
    assert!(out.relative_residual <= 1e-10);
    let scale = exact.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    assert!(out.solution.max_abs_diff(&exact) / scale < 1e-7);
}

#[test]
fn jacobi_pcg_agrees_with_cholesky() {
    let lhs = random_spd(23, 9);
    let mut r = rng(24);
    let rhs = random_matrix(&mut r, 9, 3, 1.0);
    let exact = solve_spd(&lhs, &rhs).unwrap();
    let jacobi = |res: &DenseMatrix| DenseMatrix::from_fn(9, 3, |i, j| res[(i, j)] / lhs[(i, i)]);
    let out = solve_pcg(|x| lhs.matmul(x).unwrap(), jacobi, &rhs, None, 1e-11, 500).unwrap();
    assert!(out.converged);
    let scale = exact.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    assert!(out.solution.max_abs_diff(&exact) / scale < 1e-8);
}

#[test]
fn exact_inverse_preconditioner_converges_in_one_step() {
    let lhs = random_spd(25, 6);
    let rhs = DenseMatrix::filled(6, 1, 1.0);
    let exact = solve_spd(&lhs, &rhs).unwrap();
    let inverse = |res: &DenseMatrix| solve_spd(&lhs, res).unwrap();
    let out = solve_pcg(|x| lhs.matmul(x).unwrap(), inverse, &rhs, None, 1e-10, 50).unwrap();
    assert_eq!(out.iterations, 1);
    assert!(out.solution.max_abs_diff(&exact) < 1e-10);
}

#[test]
fn cg_stops_at_max_iter_without_converging() {
    let lhs = random_spd(31, 10);
    let rhs = DenseMatrix::filled(10, 1, 1.0);
    let out = solve_cg(|x| lhs.matmul(x).unwrap(), &rhs, None, 1e-14, 2).unwrap();
    assert_eq!(out.iterations, 2);
    assert!(!out.converged);
}

#[test]
fn cg_warm_start_at_solution_needs_no_iterations() {
    let lhs = random_spd(41, 4);
    let rhs = DenseMatrix::filled(4, 1, 1.0);
    let exact = solve_spd(&lhs, &rhs).unwrap();
    let out = solve_cg(|x| lhs.matmul(x).unwrap(), &rhs, Some(&exact), 1e-8, 50).unwrap();
    assert_eq!(out.iterations, 0);
}

proptest! {
    #[test]
    fn gram_is_exactly_symmetric(seed in 0u64..1000, rows in 1usize..12, cols in 1usize..6) {
        let mut r = rng(seed);
        let g = gram(&random_matrix(&mut r, rows, cols, 3.0));
        prop_assert!(g == g.transpose());
    }

    #[test]
    fn spd_solve_recovers_x0(seed in 0u64..1000, n in 1usize..9) {
        let lhs = random_spd(seed, n);
        let mut r = rng(seed + 1);
        let x0 = random_matrix(&mut r, n, 1, 1.0);
        let rhs = lhs.matvec(x0.as_slice());
        let x = solve_spd_vec(&lhs, &rhs).unwrap();
        let scale = x0.as_slice().iter().fold(1e-3f64, |m, v| m.max(v.abs()));
        for (a, b) in x.iter().zip(x0.as_slice()) {
            prop_assert!((a - b).abs() / scale < 1e-8);
        }
    }

    #[test]
    fn operations_stay_finite(seed in 0u64..1000, n in 1usize..6) {
        let mut r = rng(seed);
        let a = random_matrix(&mut r, n, n, 10.0);
        let b = random_matrix(&mut r, n, n, 10.0);
        prop_assert!(a.matmul(&b).unwrap().is_finite());
        prop_assert!(a.hadamard(&b).unwrap().is_finite());
        prop_assert!(a.add(&b).unwrap().is_finite());
        prop_assert_eq!(a.as_slice().len(), n * n);
    }
}
