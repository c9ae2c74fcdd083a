//! Exact dense solves used as oracles for the closed-form updates.

use dtf_core::linalg::DenseMatrix;
use nalgebra::{DMatrix, DVector};

use super::gram_entry;
use super::legendre_direct;
use super::oracle::Toy;

/// Row-major `vec(X)` index of entry `(d, c)` of an `r × k` matrix.
pub fn vidx(d: usize, c: usize, k: usize) -> usize {
    d * k + c
}

/// The A system written out entry by entry:
/// `M[(d,c),(d',c')] = δ_dd' G_dd (H + λI)_cc' + Σ_e W C_d C_d' h_c h_c' + λ_A δ`.
pub fn dtf_a_by_vectorization(toy: &Toy, p: &DenseMatrix, q: &DenseMatrix) -> Vec<f64> {
    let (r, k) = (toy.cfg.r, toy.cfg.k);
    let n = r * k;
    let mut h_all: Vec<Vec<f64>> = Vec::new();
    for u in 0..p.rows() {
        for i in 0..q.rows() {
            h_all.push((0..k).map(|c| p[(u, c)] * q[(i, c)]).collect::<Vec<_>>());
        }
    }
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for d in 0..r {
        for c in 0..k {
            for c2 in 0..k {
                let implicit: f64 = h_all.iter().map(|h| h[c] * h[c2]).sum();
                let ridge = if c == c2 { toy.cfg.lambda } else { 0.0 };
                m[(vidx(d, c, k), vidx(d, c2, k))] += gram_entry(d, d) * (implicit + ridge);
            }
        }
    }
    for e in &toy.data.events {
        let h: Vec<f64> = (0..k)
            .map(|c| p[(e.user as usize, c)] * q[(e.item as usize, c)])
            .collect();
        let cr: Vec<f64> = (0..r).map(|d| legendre_direct(d, e.t)).collect();
        for d in 0..r {
            for c in 0..k {
                rhs[vidx(d, c, k)] += e.weight * cr[d] * h[c];
                for d2 in 0..r {
                    for c2 in 0..k {
                        m[(vidx(d, c, k), vidx(d2, c2, k))] += e.weight * cr[d] * cr[d2] * h[c] * h[c2];
                    }
                }
            }
        }
    }
    for j in 0..n {
        m[(j, j)] += toy.cfg.lambda_a;
    }
    let x = m.lu().solve(&rhs).unwrap();
    x.iter().copied().collect()
}

/// Projected gradient descent on `‖X − XB‖² + λ‖B‖²` with `diag(B) = 0`.
pub fn ease_numeric(x: &[[f64; 3]], lambda: f64) -> [[f64; 3]; 3] {
    let mut b = [[0.0; 3]; 3];
    let step = 1e-2;
    for _ in 0..200_000 {
        let mut grad = [[0.0; 3]; 3];
        for row in x {
            let mut resid = [0.0; 3];
            for j in 0..3 {
                resid[j] = row[j] - (0..3).map(|i| row[i] * b[i][j]).sum::<f64>();
            }
            for i in 0..3 {
                for j in 0..3 {
                    grad[i][j] -= 2.0 * row[i] * resid[j];
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    b[i][j] -= step * (grad[i][j] + 2.0 * lambda * b[i][j]);
                }
            }
        }
    }
    b
}
