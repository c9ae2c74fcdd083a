//! Dense linear algebra shared by the ALS solvers.
//!
//! Everything here works on small row-major `f64` matrices: per-row normal
//! equations of size `k × k`, the `r × k` coefficient blocks of the
//! polynomial time fit, and the occasional `n × n` item-item system.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch("ragged rows".into()));
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self { rows, cols, values }
    }

    /// Column vector from a slice.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            values: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.values[i * other.cols..(i + 1) * other.cols];
            for (l, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(l), out_row);
            }
        }
        Ok(out)
    }

    /// `self · x` for a vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `xᵀ · self` for a vector `x` of length `rows`.
    pub fn vecmat(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "vecmat dimension");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, self.row(i), &mut out);
        }
        out
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "hadamard")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            values,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add")?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_scaled")?;
        axpy(alpha, &other.values, &mut self.values);
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_scaled(-1.0, other)?;
        Ok(out)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    pub fn add_to_diagonal(&mut self, value: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += value;
        }
    }

    pub fn frobenius_dot(&self, other: &Self) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_dot(self).sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Column sums, a vector of length `cols`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            axpy(1.0, self.row(i), &mut out);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "{op} {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.values[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.values[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Element-wise product of two vectors.
#[inline]
pub fn hadamard_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Adds `weight · v vᵀ` to the upper triangle of the square matrix `acc`.
///
/// Call [`mirror_upper`] once accumulation is done.
#[inline]
pub fn add_outer_upper(acc: &mut DenseMatrix, weight: f64, v: &[f64]) {
    let n = acc.cols;
    for (i, &vi) in v.iter().enumerate() {
        let wi = weight * vi;
        if wi == 0.0 {
            continue;
        }
        let row = &mut acc.values[i * n..(i + 1) * n];
        for j in i..n {
            row[j] += wi * v[j];
        }
    }
}

/// Copies the upper triangle onto the lower one.
pub fn mirror_upper(m: &mut DenseMatrix) {
    let n = m.rows;
    for i in 0..n {
        for j in 0..i {
            m.values[i * n + j] = m.values[j * n + i];
        }
    }
}

/// `matrixᵀ · matrix`, accumulated row by row in 64-bit.
///
/// Only the upper triangle is computed; the lower one is a copy, so the
/// result is bitwise symmetric.
pub fn gram(matrix: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(matrix.cols, matrix.cols);
    for i in 0..matrix.rows {
        add_outer_upper(&mut out, 1.0, matrix.row(i));
    }
    mirror_upper(&mut out);
    out
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factors `lhs`, reading only its lower triangle.
    pub fn factor(lhs: &DenseMatrix) -> Result<Self> {
        if lhs.rows != lhs.cols {
            return Err(Error::DimensionMismatch(format!(
                "cholesky of non-square {}x{}",
                lhs.rows, lhs.cols
            )));
        }
        let n = lhs.rows;
        let mut l = lhs.values.clone();
        let mut pivot_row = vec![0.0; n];
        for j in 0..n {
            let row_j = &l[j * n..j * n + j];
            let diag = l[j * n + j] - dot(row_j, row_j);
            if diag <= 0.0 || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: j,
                    value: diag,
                });
            }
            let diag = diag.sqrt();
            l[j * n + j] = diag;
            pivot_row[..j].copy_from_slice(&l[j * n..j * n + j]);
            for i in (j + 1)..n {
                let row_i = &mut l[i * n..(i + 1) * n];
                row_i[j] = (row_i[j] - dot(&row_i[..j], &pivot_row[..j])) / diag;
            }
        }
        // zero the strict upper triangle so `lower` is a clean factor
        for i in 0..n {
            for j in (i + 1)..n {
                l[i * n + j] = 0.0;
            }
        }
        Ok(Self { n, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Overwrites `b` with the solution of `L Lᵀ x = b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n, "cholesky solve dimension");
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            b[i] = (b[i] - dot(row, &b[..i])) / self.lower[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for (j, bj) in b.iter().enumerate().skip(i + 1) {
                s -= self.lower[j * n + i] * bj;
            }
            b[i] = s / self.lower[i * n + i];
        }
    }

    pub fn solve(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if rhs.rows != self.n {
            return Err(Error::DimensionMismatch(format!(
                "rhs has {} rows, system has {}",
                rhs.rows, self.n
            )));
        }
        let mut out = DenseMatrix::zeros(rhs.rows, rhs.cols);
        let mut col = vec![0.0; self.n];
        for c in 0..rhs.cols {
            for (i, v) in col.iter_mut().enumerate() {
                *v = rhs[(i, c)];
            }
            self.solve_in_place(&mut col);
            for (i, v) in col.iter().enumerate() {
                out[(i, c)] = *v;
            }
        }
        Ok(out)
    }
}

/// A symmetric positive-definite linear system `lhs · x = rhs`.
#[derive(Debug, Clone)]
pub struct SpdSystem {
    pub lhs: DenseMatrix,
    pub rhs: DenseMatrix,
}

impl SpdSystem {
    pub fn new(lhs: DenseMatrix, rhs: DenseMatrix) -> Result<Self> {
        if lhs.rows != lhs.cols || rhs.rows != lhs.rows {
            return Err(Error::DimensionMismatch(format!(
                "lhs {}x{}, rhs {}x{}",
                lhs.rows, lhs.cols, rhs.rows, rhs.cols
            )));
        }
        let scale = lhs.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let asymmetry = lhs.max_abs_diff(&lhs.transpose());
        if asymmetry > 1e-10 * scale {
            return Err(Error::DimensionMismatch(format!(
                "lhs is not symmetric (max |lhs - lhsᵀ| = {asymmetry:e})"
            )));
        }
        Ok(Self { lhs, rhs })
    }

    pub fn solve(&self) -> Result<DenseMatrix> {
        solve_spd(&self.lhs, &self.rhs)
    }
}

/// Exact solve of an SPD system by Cholesky factorization.
pub fn solve_spd(lhs: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    Cholesky::factor(lhs)?.solve(rhs)
}

/// Vector right-hand side variant of [`solve_spd`].
pub fn solve_spd_vec(lhs: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let chol = Cholesky::factor(lhs)?;
    if rhs.len() != chol.dim() {
        return Err(Error::DimensionMismatch(format!(
            "rhs length {} for {}x{} system",
            rhs.len(),
            lhs.rows,
            lhs.cols
        )));
    }
    let mut x = rhs.to_vec();
    chol.solve_in_place(&mut x);
    Ok(x)
}

/// Result of a conjugate-gradient run.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: DenseMatrix,
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
}

pub const CG_DEFAULT_TOL: f64 = 1e-8;
pub const CG_DEFAULT_MAX_ITER: usize = 200;
const CG_DIVERGENCE_FACTOR: f64 = 1e6;

/// Matrix-free conjugate gradient for `apply_lhs(x) = rhs`, with `x` shaped
/// like `rhs` and the Frobenius inner product.
///
/// `initial` warm-starts the iteration; it defaults to zero.
pub fn solve_cg<F>(
    apply_lhs: F,
    rhs: &DenseMatrix,
    initial: Option<&DenseMatrix>,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    F: Fn(&DenseMatrix) -> DenseMatrix,
{
    solve_pcg(apply_lhs, DenseMatrix::clone, rhs, initial, tol, max_iter)
}

/// Preconditioned conjugate gradient. `precondition(r)` must apply a fixed
/// SPD approximation of the inverse lhs. The stopping test uses the plain
/// residual `‖rhs − lhs·x‖ / ‖rhs‖`, as in [`solve_cg`].
pub fn solve_pcg<F, P>(
    apply_lhs: F,
    precondition: P,
    rhs: &DenseMatrix,
    initial: Option<&DenseMatrix>,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    F: Fn(&DenseMatrix) -> DenseMatrix,
    P: Fn(&DenseMatrix) -> DenseMatrix,
{
    let rhs_norm = rhs.frobenius_norm();
    let mut x = match initial {
        Some(x0) => {
            x0.check_same_shape(rhs, "cg initial guess")?;
            x0.clone()
        }
        None => DenseMatrix::zeros(rhs.rows, rhs.cols),
    };
    if rhs_norm == 0.0 && initial.is_none() {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            converged: true,
            relative_residual: 0.0,
        });
    }
    let scale = if rhs_norm > 0.0 { rhs_norm } else { 1.0 };

    let ax = apply_lhs(&x);
    let mut r = rhs.sub(&ax)?;
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = r.frobenius_dot(&z);
    let mut res = r.frobenius_norm();
    let initial_res = res.max(f64::MIN_POSITIVE);

    let mut iterations = 0;
    while iterations < max_iter {
        if res <= tol * scale {
            break;
        }
        let ap = apply_lhs(&p);
        let curvature = p.frobenius_dot(&ap);
        if curvature <= 0.0 || !curvature.is_finite() || !(rz > 0.0) {
            return Err(Error::Diverged {
                initial: initial_res,
                current: res,
            });
        }
        let step = rz / curvature;
        x.add_scaled(step, &p)?;
        r.add_scaled(-step, &ap)?;
        res = r.frobenius_norm();
        iterations += 1;
        if res > CG_DIVERGENCE_FACTOR * initial_res || !res.is_finite() {
            return Err(Error::Diverged {
                initial: initial_res,
                current: res,
            });
        }
        z = precondition(&r);
        let rz_next = r.frobenius_dot(&z);
        let beta = rz_next / rz;
        rz = rz_next;
        for (pi, zi) in p.values.iter_mut().zip(&z.values) {
            *pi = zi + beta * *pi;
        }
    }
    let relative_residual = res / scale;
    Ok(CgOutcome {
        solution: x,
        iterations,
        converged: relative_residual <= tol,
        relative_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn identity_system() {
        let x = solve_spd_vec(&DenseMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_close(&x, &[1.0, 2.0, 3.0], 1e-15);
    }

    #[test]
    fn diagonal_system() {
        let x = solve_spd_vec(&DenseMatrix::diagonal(&[2.0, 4.0]), &[2.0, 8.0]).unwrap();
        assert_close(&x, &[1.0, 2.0], 1e-15);
    }

    #[test]
    fn not_positive_definite_is_reported() {
        let lhs = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let err = solve_spd_vec(&lhs, &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { pivot: 1, .. }));
    }

    #[test]
    fn cg_identity_converges_in_one_iteration() {
        let rhs = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let out = solve_cg(|x| x.clone(), &rhs, None, 1e-12, 50).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        assert_close(out.solution.as_slice(), rhs.as_slice(), 1e-15);
    }

    #[test]
    fn cg_diagonal_operator() {
        let diag = [1.0, 2.0, 3.0, 4.0, 5.0];
        let rhs = DenseMatrix::column(&[1.0; 5]);
        let op = |x: &DenseMatrix| {
            DenseMatrix::column(&x.as_slice().iter().zip(&diag).map(|(a, d)| a * d).collect::<Vec<_>>())
        };
        let out = solve_cg(op, &rhs, None, 1e-12, 50).unwrap();
        assert!(out.converged);
        assert_close(
            out.solution.as_slice(),
            &[1.0, 0.5, 1.0 / 3.0, 0.25, 0.2],
            1e-10,
        );
    }

    #[test]
    fn cg_flags_indefinite_operator() {
        let rhs = DenseMatrix::column(&[1.0, 1.0]);
        let op = |x: &DenseMatrix| DenseMatrix::column(&[x.as_slice()[0], -x.as_slice()[1]]);
        assert!(matches!(
            solve_cg(op, &rhs, None, 1e-12, 50),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn gram_of_ones_and_identity() {
        let g = gram(&DenseMatrix::filled(2, 3, 1.0));
        assert_eq!(g, DenseMatrix::filled(3, 3, 2.0));
        assert_eq!(gram(&DenseMatrix::identity(3)), DenseMatrix::identity(3));
    }

    #[test]
    fn gram_is_bitwise_symmetric() {
        let m = DenseMatrix::from_fn(7, 4, |i, j| ((i * 31 + j * 17) as f64).sin() * 1.3);
        let g = gram(&m);
        assert_eq!(g, g.transpose());
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(DenseMatrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    }
}
