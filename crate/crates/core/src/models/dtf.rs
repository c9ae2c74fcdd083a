//! Dynamic tensor factorization: the time factor of an event is a
//! polynomial fit `B_t = C_t A` over the normalized time axis, where `C_t`
//! holds the Legendre basis at `t` and `A` is `r × k`.
//!
//! The all-cells term integrates over time, so the number of bins never
//! enters: `Σ_{u,i} ∫ X̂² = sum(PᵀP ⊙ QᵀQ ⊙ AᵀGA)` with `G` the diagonal
//! Legendre Gram matrix. The full objective is
//!
//! `L = Σ_e W (1 − X̂_e)² + sum(PᵀP ⊙ QᵀQ ⊙ AᵀGA) + λ(‖P‖² + ‖Q‖² + tr(AᵀGA)) + λ_A ‖A‖²`.
//!
//! With the kernel variant every event instead fits the curve
//! `K(t' − t)` over all `t'`, which replaces the event term by
//! `W ∫ (K(t' − t) − X̂(t'))² dt' = W [2 k2 − 4 kc·(A h) + hᵀ AᵀGA h]`
//! with `h = P_u ⊙ Q_i` and `k2`, `kc` the kernel moments (means over
//! `[-1, 1]`, hence the factor 2 against the integral).

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::EventLog;
use crate::error::{Error, Result};
use crate::legendre::{GramLimit, LegendreBasis};
use crate::linalg::{add_outer_upper, axpy, dot, gram, solve_pcg, Cholesky, DenseMatrix};

use super::als::{
    chunked_sum, chunked_sum_scalar, gaussian_matrix, run_als, solve_into, solve_rows, with_threads,
    AlsModel, Block,
};
use super::data::Interactions;
use super::{triple_dot, FactorModel, ModelKind, TimeRep, TrainConfig};

/// Per-event kernel moments.
#[derive(Debug, Clone)]
struct EventMoments {
    k2: Vec<f64>,
    /// `events × r`
    kc: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct DtfState {
    pub p: DenseMatrix,
    pub q: DenseMatrix,
    /// Fit coefficients, `r × k`.
    pub a: DenseMatrix,
    lambda: f64,
    lambda_a: f64,
    cg_tol: f64,
    cg_max_iter: usize,
    gram_limit: GramLimit,
    /// Basis rows of every event, `events × r`.
    c_rows: DenseMatrix,
    moments: Option<EventMoments>,
    last_cg_iterations: Option<usize>,
}

/// Initial `P`, `Q` and `A` (degree-0 row Gaussian, the rest zero).
pub(crate) fn fit_init(
    data: &Interactions,
    cfg: &TrainConfig,
) -> (DenseMatrix, DenseMatrix, DenseMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = 1.0 / (cfg.k as f64).sqrt();
    let p = gaussian_matrix(&mut rng, data.n_users, cfg.k, std);
    let q = gaussian_matrix(&mut rng, data.n_items, cfg.k, std);
    let row = gaussian_matrix(&mut rng, 1, cfg.k, std);
    let a = DenseMatrix::from_fn(cfg.r, cfg.k, |d, c| if d == 0 { row[(0, c)] } else { 0.0 });
    (p, q, a)
}

/// Basis rows of every event.
pub(crate) fn event_basis_rows(data: &Interactions, basis: &LegendreBasis) -> DenseMatrix {
    let r = basis.order();
    let mut rows = DenseMatrix::zeros(data.events.len(), r);
    for (idx, e) in data.events.iter().enumerate() {
        basis.eval_into(e.t, rows.row_mut(idx));
    }
    rows
}

impl DtfState {
    pub fn new(data: &Interactions, cfg: &TrainConfig, kernel: bool) -> Result<Self> {
        let (p, q, a) = fit_init(data, cfg);
        Self::with_factors(data, cfg, kernel, p, q, a)
    }

    pub fn with_factors(
        data: &Interactions,
        cfg: &TrainConfig,
        kernel: bool,
        p: DenseMatrix,
        q: DenseMatrix,
        a: DenseMatrix,
    ) -> Result<Self> {
        let basis = LegendreBasis::new(cfg.r)?;
        if a.shape() != (cfg.r, cfg.k) {
            return Err(Error::DimensionMismatch(format!(
                "A is {:?}, expected ({}, {})",
                a.shape(),
                cfg.r,
                cfg.k
            )));
        }
        let moments = if kernel {
            Some(event_moments(data, &basis, cfg.sigma, cfg.kernel_samples)?)
        } else {
            None
        };
        Ok(Self {
            p,
            q,
            a,
            lambda: cfg.lambda,
            lambda_a: cfg.lambda_a,
            cg_tol: cfg.cg_tol,
            cg_max_iter: cfg.cg_max_iter,
            gram_limit: basis.gram_limit(),
            c_rows: event_basis_rows(data, &basis),
            moments,
            last_cg_iterations: None,
        })
    }

    pub fn is_kernel(&self) -> bool {
        self.moments.is_some()
    }

    /// CG iterations of the most recent `A` solve (plain DTF only).
    pub fn last_cg_iterations(&self) -> Option<usize> {
        self.last_cg_iterations
    }

    /// `C_t A` for every event, `events × k`.
    fn time_factors(&self) -> DenseMatrix {
        self.c_rows.matmul(&self.a).expect("events×r · r×k")
    }

    /// Applies the `A`-block normal operator of plain DTF:
    /// `X ↦ G X (PᵀP ⊙ QᵀQ + λI) + Σ_e W C_tᵀ (C_t X h_e) h_eᵀ + λ_A X`.
    pub fn apply_a_operator(&self, data: &Interactions, x: &DenseMatrix) -> DenseMatrix {
        let mut h = gram(&self.p).hadamard(&gram(&self.q)).expect("k×k");
        h.add_to_diagonal(self.lambda);
        self.apply_a_operator_with(data, x, &h)
    }

    fn apply_a_operator_with(&self, data: &Interactions, x: &DenseMatrix, h_reg: &DenseMatrix) -> DenseMatrix {
        let (r, k) = x.shape();
        let mut out = self.gram_limit.left_mul(&x.matmul(h_reg).expect("r×k · k×k"));
        let events = &data.events;
        let local = chunked_sum(events.len(), r, k, |range, acc| {
            let mut h = vec![0.0; k];
            for idx in range {
                let e = &events[idx];
                let (pu, qi) = (self.p.row(e.user as usize), self.q.row(e.item as usize));
                for c in 0..k {
                    h[c] = pu[c] * qi[c];
                }
                let ct = self.c_rows.row(idx);
                let s = dot(&x.vecmat(ct), &h) * e.weight;
                for (d, &cd) in ct.iter().enumerate() {
                    axpy(s * cd, &h, acc.row_mut(d));
                }
            }
        });
        out.add_assign(&local).expect("r×k");
        out.add_scaled(self.lambda_a, x).expect("r×k");
        out
    }

    /// Right-hand side of the plain `A` block: `Σ_e W C_tᵀ h_eᵀ`.
    pub fn a_rhs(&self, data: &Interactions) -> DenseMatrix {
        let (r, k) = self.a.shape();
        let events = &data.events;
        chunked_sum(events.len(), r, k, |range, acc| {
            for idx in range {
                let e = &events[idx];
                let (pu, qi) = (self.p.row(e.user as usize), self.q.row(e.item as usize));
                let ct = self.c_rows.row(idx);
                for (d, &cd) in ct.iter().enumerate() {
                    let row = acc.row_mut(d);
                    for c in 0..k {
                        row[c] += e.weight * cd * pu[c] * qi[c];
                    }
                }
            }
        })
    }

    /// Cholesky factors of the diagonal blocks of the `A` operator, one per
    /// basis row: `G_dd (H + λI) + Σ_e W C_td² h_e h_eᵀ + λ_A I`.
    fn a_preconditioner(&self, data: &Interactions, h_reg: &DenseMatrix) -> Result<Vec<Cholesky>> {
        let (r, k) = self.a.shape();
        let events = &data.events;
        let stacked = chunked_sum(events.len(), r * k, k, |range, acc| {
            let mut h = vec![0.0; k];
            for idx in range {
                let e = &events[idx];
                let (pu, qi) = (self.p.row(e.user as usize), self.q.row(e.item as usize));
                for c in 0..k {
                    h[c] = pu[c] * qi[c];
                }
                for (d, &cd) in self.c_rows.row(idx).iter().enumerate() {
                    let w = e.weight * cd * cd;
                    for a in 0..k {
                        let wa = w * h[a];
                        let row = acc.row_mut(d * k + a);
                        for b in a..k {
                            row[b] += wa * h[b];
                        }
                    }
                }
            }
        });
        let g = self.gram_limit.diagonal();
        (0..r)
            .map(|d| {
                let mut block = DenseMatrix::from_fn(k, k, |a, b| {
                    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                    g[d] * h_reg[(a, b)] + stacked[(d * k + lo, hi)]
                });
                block.add_to_diagonal(self.lambda_a);
                Cholesky::factor(&block)
            })
            .collect()
    }

    fn update_factor(&mut self, block: Block, data: &Interactions) -> Result<()> {
        let (target, other, groups) = match block {
            Block::Users => (&mut self.p, &self.q, &data.by_user),
            Block::Items => (&mut self.q, &self.p, &data.by_item),
            Block::Time => unreachable!(),
        };
        let k = other.cols();
        let ata = self.gram_limit.sandwich(&self.a);
        let other_of = |e: &super::TrainEvent| match block {
            Block::Users => e.item as usize,
            _ => e.user as usize,
        };
        let events = &data.events;
        let lambda = self.lambda;
        match &self.moments {
            None => {
                let ca = self.c_rows.matmul(&self.a)?;
                let mut base = gram(other).hadamard(&ata)?;
                base.add_to_diagonal(lambda);
                solve_rows(target, |row, out| {
                    let mut lhs = base.clone();
                    let mut rhs = vec![0.0; k];
                    let mut z = vec![0.0; k];
                    for &idx in &groups[row] {
                        let e = &events[idx as usize];
                        let o = other.row(other_of(e));
                        let b = ca.row(idx as usize);
                        for c in 0..k {
                            z[c] = o[c] * b[c];
                        }
                        add_outer_upper(&mut lhs, e.weight, &z);
                        axpy(e.weight, &z, &mut rhs);
                    }
                    solve_into(lhs, rhs, out)
                })
            }
            Some(m) => {
                // row e holds (A^T kc_e)^T
                let akc = m.kc.matmul(&self.a)?;
                let base_gram = gram(other);
                solve_rows(target, |row, out| {
                    let mut local = base_gram.clone();
                    let mut rhs = vec![0.0; k];
                    for &idx in &groups[row] {
                        let e = &events[idx as usize];
                        let o = other.row(other_of(e));
                        add_outer_upper(&mut local, e.weight, o);
                        let v = akc.row(idx as usize);
                        for c in 0..k {
                            rhs[c] += 2.0 * e.weight * o[c] * v[c];
                        }
                    }
                    crate::linalg::mirror_upper(&mut local);
                    let mut lhs = local.hadamard(&ata).expect("k×k");
                    lhs.add_to_diagonal(lambda);
                    solve_into(lhs, rhs, out)
                })
            }
        }
    }

    fn update_a(&mut self, data: &Interactions) -> Result<()> {
        let mut h_reg = gram(&self.p).hadamard(&gram(&self.q))?;
        h_reg.add_to_diagonal(self.lambda);
        match &self.moments {
            None => {
                let rhs = self.a_rhs(data);
                let blocks = self.a_preconditioner(data, &h_reg)?;
                let outcome = solve_pcg(
                    |x| self.apply_a_operator_with(data, x, &h_reg),
                    |res| {
                        let mut z = res.clone();
                        for (d, chol) in blocks.iter().enumerate() {
                            chol.solve_in_place(z.row_mut(d));
                        }
                        z
                    },
                    &rhs,
                    Some(&self.a),
                    self.cg_tol,
                    self.cg_max_iter,
                )?;
                if !outcome.converged {
                    log::warn!(
                        "A solve stopped after {} CG iterations at relative residual {:.3e}",
                        outcome.iterations,
                        outcome.relative_residual
                    );
                }
                self.last_cg_iterations = Some(outcome.iterations);
                self.a = outcome.solution;
            }
            Some(m) => {
                // G A M + λ_A A = R with G diagonal: one k×k solve per basis row.
                let (r, k) = self.a.shape();
                let events = &data.events;
                let (p, q) = (&self.p, &self.q);
                let local = chunked_sum(events.len(), k, k, |range, acc| {
                    let mut h = vec![0.0; k];
                    for e in &events[range] {
                        let (pu, qi) = (p.row(e.user as usize), q.row(e.item as usize));
                        for c in 0..k {
                            h[c] = pu[c] * qi[c];
                        }
                        add_outer_upper(acc, e.weight, &h);
                    }
                });
                let mut local = local;
                crate::linalg::mirror_upper(&mut local);
                let kc = &m.kc;
                let rhs = chunked_sum(events.len(), r, k, |range, acc| {
                    for idx in range {
                        let e = &events[idx];
                        let (pu, qi) = (p.row(e.user as usize), q.row(e.item as usize));
                        for (d, &v) in kc.row(idx).iter().enumerate() {
                            let row = acc.row_mut(d);
                            for c in 0..k {
                                row[c] += 2.0 * e.weight * v * pu[c] * qi[c];
                            }
                        }
                    }
                });
                let m_total = h_reg.add(&local)?;
                let g = self.gram_limit.diagonal().to_vec();
                let lambda_a = self.lambda_a;
                solve_rows(&mut self.a, |d, out| {
                    let mut lhs = m_total.scaled(g[d]);
                    lhs.add_to_diagonal(lambda_a);
                    let mut x = rhs.row(d).to_vec();
                    Cholesky::factor(&lhs)?.solve_in_place(&mut x);
                    out.copy_from_slice(&x);
                    Ok(())
                })?;
                self.last_cg_iterations = None;
            }
        }
        Ok(())
    }

    pub fn into_model(self, log: &EventLog, cfg: &TrainConfig) -> FactorModel {
        let kind = if self.is_kernel() {
            ModelKind::DtfKernel
        } else {
            ModelKind::Dtf
        };
        let mut model = FactorModel::empty(kind, log, cfg);
        model.p = self.p;
        model.q = self.q;
        model.time = TimeRep::Fit { a: self.a };
        model
    }
}

fn event_moments(
    data: &Interactions,
    basis: &LegendreBasis,
    sigma: f64,
    samples: usize,
) -> Result<EventMoments> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidKernelWidth(sigma));
    }
    let r = basis.order();
    let mut cache: HashMap<u64, (f64, Vec<f64>)> = HashMap::new();
    let mut k2 = Vec::with_capacity(data.events.len());
    let mut kc = DenseMatrix::zeros(data.events.len(), r);
    for (idx, e) in data.events.iter().enumerate() {
        let entry = match cache.get(&e.t.to_bits()) {
            Some(hit) => hit,
            None => {
                let m = basis.kernel_moments(e.t, sigma, samples)?;
                cache.entry(e.t.to_bits()).or_insert((m.k2, m.kc))
            }
        };
        k2.push(entry.0);
        kc.row_mut(idx).copy_from_slice(&entry.1);
    }
    Ok(EventMoments { k2, kc })
}

impl AlsModel for DtfState {
    fn blocks(&self) -> &'static [Block] {
        &[Block::Users, Block::Items, Block::Time]
    }

    fn update(&mut self, block: Block, data: &Interactions) -> Result<()> {
        match block {
            Block::Users | Block::Items => self.update_factor(block, data),
            Block::Time => self.update_a(data),
        }
    }

    fn loss(&self, data: &Interactions) -> f64 {
        let ata = self.gram_limit.sandwich(&self.a);
        let events = &data.events;
        let k = self.a.cols();
        let observed = match &self.moments {
            None => {
                let ca = self.time_factors();
                chunked_sum_scalar(events.len(), |range| {
                    range
                        .map(|idx| {
                            let e = &events[idx];
                            let x = triple_dot(
                                self.p.row(e.user as usize),
                                self.q.row(e.item as usize),
                                ca.row(idx),
                            );
                            e.weight * (1.0 - x) * (1.0 - x)
                        })
                        .sum()
                })
            }
            Some(m) => {
                let akc = m.kc.matmul(&self.a).expect("events×r · r×k");
                chunked_sum_scalar(events.len(), |range| {
                    let mut h = vec![0.0; k];
                    range
                        .map(|idx| {
                            let e = &events[idx];
                            let (pu, qi) = (self.p.row(e.user as usize), self.q.row(e.item as usize));
                            for c in 0..k {
                                h[c] = pu[c] * qi[c];
                            }
                            let quad = dot(&h, &ata.matvec(&h));
                            e.weight * (2.0 * m.k2[idx] - 4.0 * dot(akc.row(idx), &h) + quad)
                        })
                        .sum()
                })
            }
        };
        let implicit = gram(&self.p)
            .hadamard(&gram(&self.q))
            .and_then(|h| h.hadamard(&ata))
            .expect("k×k")
            .sum();
        let trace: f64 = (0..k).map(|c| ata[(c, c)]).sum();
        let reg = self.lambda * (self.p.frobenius_dot(&self.p) + self.q.frobenius_dot(&self.q) + trace)
            + self.lambda_a * self.a.frobenius_dot(&self.a);
        observed + implicit + reg
    }
}

fn train_fit(log: &EventLog, cfg: &TrainConfig, kernel: bool) -> Result<FactorModel> {
    cfg.validate()?;
    if kernel && !(cfg.sigma > 0.0) {
        return Err(Error::InvalidKernelWidth(cfg.sigma));
    }
    let data = Interactions::new(log, cfg)?;
    with_threads(cfg.threads, || {
        let mut state = DtfState::new(&data, cfg, kernel)?;
        let label = if kernel { "dtf-kernel" } else { "dtf" };
        run_als(&mut state, &data, cfg.iterations, label)?;
        Ok(state.into_model(log, cfg))
    })?
}

/// Trains DTF: exact per-row user and item solves, then a CG solve for `A`.
pub fn train_dtf(log: &EventLog, cfg: &TrainConfig) -> Result<FactorModel> {
    train_fit(log, cfg, false)
}

/// Trains the kernel variant of DTF with bandwidth `cfg.sigma`.
pub fn train_dtf_kernel(log: &EventLog, cfg: &TrainConfig) -> Result<FactorModel> {
    train_fit(log, cfg, true)
}
