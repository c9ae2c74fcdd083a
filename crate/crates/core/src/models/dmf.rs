//! Dynamic matrix factorization: every item owns a polynomial fit
//! `Q_i(t) = C_t A_i` with `A_i` of shape `r × k`, and `X̂ = P_u · Q_i(t)`.
//!
//! `L = Σ_e W (1 − X̂_e)² + sum(PᵀP ⊙ Σ_i A_iᵀGA_i) + λ(‖P‖² + Σ_i tr(A_iᵀGA_i)) + λ_A Σ_i ‖A_i‖²`
//!
//! The per-item block is `G A_i (PᵀP + λI) + Σ_{e∈i} W C_tᵀ C_t A_i P_u P_uᵀ + λ_A A_i = Σ_{e∈i} W C_tᵀ P_uᵀ`,
//! solved by warm-started CG for each item independently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::EventLog;
use crate::error::{Error, Result};
use crate::legendre::{GramLimit, LegendreBasis};
use crate::linalg::{add_outer_upper, axpy, dot, gram, mirror_upper, solve_pcg, Cholesky, DenseMatrix};

use super::als::{chunked_sum_scalar, gaussian_matrix, run_als, solve_into, solve_rows, with_threads, AlsModel, Block};
use super::data::Interactions;
use super::dtf::event_basis_rows;
use super::{FactorModel, ModelKind, TimeRep, TrainConfig};

#[derive(Debug, Clone)]
pub struct DmfState {
    pub p: DenseMatrix,
    /// Per-item fit coefficients, each `r × k`.
    pub a: Vec<DenseMatrix>,
    lambda: f64,
    lambda_a: f64,
    cg_tol: f64,
    cg_max_iter: usize,
    gram_limit: GramLimit,
    c_rows: DenseMatrix,
}

/// Bytes needed for the per-item coefficient tensor.
pub fn dmf_coefficient_bytes(n_items: usize, r: usize, k: usize) -> usize {
    n_items
        .saturating_mul(r)
        .saturating_mul(k)
        .saturating_mul(std::mem::size_of::<f64>())
}

impl DmfState {
    pub fn new(data: &Interactions, cfg: &TrainConfig) -> Result<Self> {
        check_budget(data.n_items, cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let std = 1.0 / (cfg.k as f64).sqrt();
        let p = gaussian_matrix(&mut rng, data.n_users, cfg.k, std);
        let a = (0..data.n_items)
            .map(|_| {
                let row = gaussian_matrix(&mut rng, 1, cfg.k, std);
                DenseMatrix::from_fn(cfg.r, cfg.k, |d, c| if d == 0 { row[(0, c)] } else { 0.0 })
            })
            .collect();
        Self::with_factors(data, cfg, p, a)
    }

    pub fn with_factors(
        data: &Interactions,
        cfg: &TrainConfig,
        p: DenseMatrix,
        a: Vec<DenseMatrix>,
    ) -> Result<Self> {
        check_budget(data.n_items, cfg)?;
        let basis = LegendreBasis::new(cfg.r)?;
        if a.len() != data.n_items || a.iter().any(|ai| ai.shape() != (cfg.r, cfg.k)) {
            return Err(Error::DimensionMismatch(format!(
                "expected {} coefficient matrices of shape ({}, {})",
                data.n_items, cfg.r, cfg.k
            )));
        }
        Ok(Self {
            p,
            a,
            lambda: cfg.lambda,
            lambda_a: cfg.lambda_a,
            cg_tol: cfg.cg_tol,
            cg_max_iter: cfg.cg_max_iter,
            gram_limit: basis.gram_limit(),
            c_rows: event_basis_rows(data, &basis),
        })
    }

    /// `C_t A_i` for event `idx` of item `item`.
    fn item_factor(&self, idx: usize, item: usize) -> Vec<f64> {
        self.a[item].vecmat(self.c_rows.row(idx))
    }

    /// `Σ_i A_iᵀGA_i`
    fn sandwich_sum(&self) -> DenseMatrix {
        let k = self.p.cols();
        let mut total = DenseMatrix::zeros(k, k);
        for ai in &self.a {
            total.add_assign(&self.gram_limit.sandwich(ai)).expect("k×k");
        }
        total
    }

    fn update_users(&mut self, data: &Interactions) -> Result<()> {
        let k = self.p.cols();
        let mut base = self.sandwich_sum();
        base.add_to_diagonal(self.lambda);
        let events = &data.events;
        let (a, c_rows) = (&self.a, &self.c_rows);
        solve_rows(&mut self.p, |row, out| {
            let mut lhs = base.clone();
            let mut rhs = vec![0.0; k];
            for &idx in &data.by_user[row] {
                let e = &events[idx as usize];
                let v = a[e.item as usize].vecmat(c_rows.row(idx as usize));
                add_outer_upper(&mut lhs, e.weight, &v);
                axpy(e.weight, &v, &mut rhs);
            }
            solve_into(lhs, rhs, out)
        })
    }

    /// Applies the per-item operator of item `item` to `x`.
    pub fn apply_item_operator(
        &self,
        data: &Interactions,
        item: usize,
        x: &DenseMatrix,
    ) -> DenseMatrix {
        let mut m = gram(&self.p);
        m.add_to_diagonal(self.lambda);
        self.apply_item_operator_with(data, item, x, &m)
    }

    fn apply_item_operator_with(
        &self,
        data: &Interactions,
        item: usize,
        x: &DenseMatrix,
        m: &DenseMatrix,
    ) -> DenseMatrix {
        let mut out = self.gram_limit.left_mul(&x.matmul(m).expect("r×k · k×k"));
        for &idx in &data.by_item[item] {
            let e = &data.events[idx as usize];
            let pu = self.p.row(e.user as usize);
            let ct = self.c_rows.row(idx as usize);
            let s = e.weight * dot(&x.vecmat(ct), pu);
            for (d, &cd) in ct.iter().enumerate() {
                axpy(s * cd, pu, out.row_mut(d));
            }
        }
        out.add_scaled(self.lambda_a, x).expect("r×k");
        out
    }

    /// Right-hand side `Σ_{e∈i} W C_tᵀ P_uᵀ` of item `item`.
    pub fn item_rhs(&self, data: &Interactions, item: usize) -> DenseMatrix {
        let (r, k) = (self.gram_limit.diagonal().len(), self.p.cols());
        let mut rhs = DenseMatrix::zeros(r, k);
        for &idx in &data.by_item[item] {
            let e = &data.events[idx as usize];
            let pu = self.p.row(e.user as usize);
            for (d, &cd) in self.c_rows.row(idx as usize).iter().enumerate() {
                axpy(e.weight * cd, pu, rhs.row_mut(d));
            }
        }
        rhs
    }

    /// Cholesky factors of the diagonal blocks of item `item`'s operator:
    /// `G_dd (PᵀP + λI) + Σ_{e∈i} W C_td² P_u P_uᵀ + λ_A I`.
    fn item_preconditioner(&self, data: &Interactions, item: usize, m: &DenseMatrix) -> Result<Vec<Cholesky>> {
        let g = self.gram_limit.diagonal();
        let mut blocks: Vec<DenseMatrix> = g
            .iter()
            .map(|&gd| {
                let mut b = m.scaled(gd);
                b.add_to_diagonal(self.lambda_a);
                b
            })
            .collect();
        for &idx in &data.by_item[item] {
            let e = &data.events[idx as usize];
            let pu = self.p.row(e.user as usize);
            for (d, &cd) in self.c_rows.row(idx as usize).iter().enumerate() {
                add_outer_upper(&mut blocks[d], e.weight * cd * cd, pu);
            }
        }
        blocks
            .into_iter()
            .map(|mut b| {
                mirror_upper(&mut b);
                Cholesky::factor(&b)
            })
            .collect()
    }

    fn update_items(&mut self, data: &Interactions) -> Result<()> {
        let mut m = gram(&self.p);
        m.add_to_diagonal(self.lambda);
        let solved: Vec<DenseMatrix> = (0..self.a.len())
            .into_par_iter()
            .map(|item| {
                let rhs = self.item_rhs(data, item);
                let blocks = self.item_preconditioner(data, item, &m)?;
                let outcome = solve_pcg(
                    |x| self.apply_item_operator_with(data, item, x, &m),
                    |res| {
                        let mut z = res.clone();
                        for (d, chol) in blocks.iter().enumerate() {
                            chol.solve_in_place(z.row_mut(d));
                        }
                        z
                    },
                    &rhs,
                    Some(&self.a[item]),
                    self.cg_tol,
                    self.cg_max_iter,
                )?;
                if !outcome.converged {
                    log::warn!(
                        "item {item}: coefficient solve stopped at relative residual {:.3e}",
                        outcome.relative_residual
                    );
                }
                Ok(outcome.solution)
            })
            .collect::<Result<_>>()?;
        self.a = solved;
        Ok(())
    }

    pub fn into_model(self, log: &EventLog, cfg: &TrainConfig) -> FactorModel {
        let mut model = FactorModel::empty(ModelKind::Dmf, log, cfg);
        model.p = self.p;
        model.time = TimeRep::PerItemFit { a: self.a };
        model
    }
}

fn check_budget(n_items: usize, cfg: &TrainConfig) -> Result<()> {
    let needed = dmf_coefficient_bytes(n_items, cfg.r, cfg.k);
    if needed > cfg.dmf_budget_bytes {
        return Err(Error::MemoryBudgetExceeded {
            needed,
            budget: cfg.dmf_budget_bytes,
        });
    }
    Ok(())
}

impl AlsModel for DmfState {
    fn blocks(&self) -> &'static [Block] {
        &[Block::Users, Block::Items]
    }

    fn update(&mut self, block: Block, data: &Interactions) -> Result<()> {
        match block {
            Block::Users => self.update_users(data),
            Block::Items => self.update_items(data),
            Block::Time => Ok(()),
        }
    }

    fn loss(&self, data: &Interactions) -> f64 {
        let events = &data.events;
        let observed = chunked_sum_scalar(events.len(), |range| {
            range
                .map(|idx| {
                    let e = &events[idx];
                    let x = dot(self.p.row(e.user as usize), &self.item_factor(idx, e.item as usize));
                    e.weight * (1.0 - x) * (1.0 - x)
                })
                .sum()
        });
        let sandwiches = self.sandwich_sum();
        let implicit = gram(&self.p).hadamard(&sandwiches).expect("k×k").sum();
        let trace: f64 = (0..sandwiches.rows()).map(|c| sandwiches[(c, c)]).sum();
        let coef_sq: f64 = self.a.iter().map(|ai| ai.frobenius_dot(ai)).sum();
        observed + implicit + self.lambda * (self.p.frobenius_dot(&self.p) + trace) + self.lambda_a * coef_sq
    }
}

/// Trains DMF; fails early when the coefficient tensor exceeds `cfg.dmf_budget_bytes`.
pub fn train_dmf(log: &EventLog, cfg: &TrainConfig) -> Result<FactorModel> {
    cfg.validate()?;
    check_budget(log.n_items(), cfg)?;
    let data = Interactions::new(log, cfg)?;
    with_threads(cfg.threads, || {
        let mut state = DmfState::new(&data, cfg)?;
        run_als(&mut state, &data, cfg.iterations, "dmf")?;
        Ok(state.into_model(log, cfg))
    })?
}
