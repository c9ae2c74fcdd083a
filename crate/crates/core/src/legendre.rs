//! Legendre polynomial basis for the continuous time embedding.
//!
//! Timestamps are normalized to `[-1, 1]`, where the Legendre polynomials
//! `P_0 .. P_{r-1}` are orthogonal: `∫ P_d P_e dt = 2/(2d+1) δ_de`. A row of
//! the pseudo-Vandermonde matrix is the basis evaluated at one timestamp, so
//! the time factor at `t` is simply `row(t) · A`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Default number of midpoint samples used for kernel moments.
pub const DEFAULT_KERNEL_SAMPLES: usize = 1000;

/// Basis of `order` Legendre polynomials (degrees `0 ..= order - 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendreBasis {
    order: usize,
}

impl LegendreBasis {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidConfig("basis order r must be >= 1".into()));
        }
        Ok(Self { order })
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    /// Evaluates all basis polynomials at `t` using the three-term recurrence
    /// `(d+1) P_{d+1} = (2d+1) t P_d - d P_{d-1}`.
    ///
    /// `t` outside `[-1, 1]` is allowed (extrapolation).
    pub fn eval_row(&self, t: f64) -> VandermondeRow {
        let mut values = vec![0.0; self.order];
        self.eval_into(t, &mut values);
        VandermondeRow { t, values }
    }

    /// Allocation-free form of [`eval_row`](Self::eval_row).
    #[inline]
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.order);
        out[0] = 1.0;
        if self.order > 1 {
            out[1] = t;
        }
        for d in 1..self.order.saturating_sub(1) {
            let df = d as f64;
            out[d + 1] = ((2.0 * df + 1.0) * t * out[d] - df * out[d - 1]) / (df + 1.0);
        }
    }

    /// The analytic Gram matrix `∫_{-1}^{1} C_tᵀ C_t dt`.
    pub fn gram_limit(&self) -> GramLimit {
        GramLimit {
            diag: (0..self.order).map(|i| 2.0 / (2.0 * i as f64 + 1.0)).collect(),
        }
    }

    /// Moments of the Gaussian kernel `K(s) = exp(-(s/σ)²)` centred at `t`,
    /// averaged over a uniform midpoint grid of `samples` points on `[-1, 1]`.
    pub fn kernel_moments(&self, t: f64, sigma: f64, samples: usize) -> Result<KernelMoments> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidKernelWidth(sigma));
        }
        if samples < 2 {
            return Err(Error::InvalidConfig("kernel moments need >= 2 samples".into()));
        }
        let step = 2.0 / samples as f64;
        let mut row = vec![0.0; self.order];
        let mut k2 = 0.0;
        let mut kc = vec![0.0; self.order];
        for j in 0..samples {
            let s = -1.0 + (j as f64 + 0.5) * step;
            let kernel = gaussian_kernel(t - s, sigma);
            if kernel == 0.0 {
                continue;
            }
            self.eval_into(s, &mut row);
            k2 += kernel * kernel;
            for (acc, c) in kc.iter_mut().zip(&row) {
                *acc += kernel * c;
            }
        }
        let inv = 1.0 / samples as f64;
        kc.iter_mut().for_each(|v| *v *= inv);
        Ok(KernelMoments {
            t,
            sigma,
            k2: k2 * inv,
            kc,
        })
    }
}

/// `exp(-(delta/σ)²)`
#[inline]
pub fn gaussian_kernel(delta: f64, sigma: f64) -> f64 {
    let z = delta / sigma;
    (-z * z).exp()
}

/// One row of the pseudo-Vandermonde matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VandermondeRow {
    pub t: f64,
    pub values: Vec<f64>,
}

impl VandermondeRow {
    /// `row · A`, the time factor for coefficient matrix `A` (`r × k`).
    pub fn times(&self, coefficients: &DenseMatrix) -> Vec<f64> {
        coefficients.vecmat(&self.values)
    }
}

/// Diagonal Gram matrix of the Legendre basis over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramLimit {
    diag: Vec<f64>,
}

impl GramLimit {
    #[inline]
    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::diagonal(&self.diag)
    }

    /// `G · X` for `X` with `r` rows.
    pub fn left_mul(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut out = x.clone();
        for (d, g) in self.diag.iter().enumerate() {
            out.row_mut(d).iter_mut().for_each(|v| *v *= g);
        }
        out
    }

    /// `Aᵀ G A`, a `k × k` matrix.
    pub fn sandwich(&self, a: &DenseMatrix) -> DenseMatrix {
        let k = a.cols();
        let mut out = DenseMatrix::zeros(k, k);
        for (d, g) in self.diag.iter().enumerate() {
            crate::linalg::add_outer_upper(&mut out, *g, a.row(d));
        }
        crate::linalg::mirror_upper(&mut out);
        out
    }
}

/// Mean of `K²` and of `K · C_{t'}` over `t' ∈ [-1, 1]` for a kernel centred at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMoments {
    pub t: f64,
    pub sigma: f64,
    pub k2: f64,
    pub kc: Vec<f64>,
}
