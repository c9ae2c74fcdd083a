//! iTALSx: the pairwise-additive tensor model `X̂ = P_u·Q_i + P_u·B_b + Q_i·B_b`
//! under the same loss as iTALS (default factors fixed at zero).
//!
//! Each block enters the prediction linearly. For the user block, with
//! `z = Q_i + B_b` and `c = Q_i·B_b`, the prediction is `P_u·z + c`, so the
//! normal equations are
//!
//! `[Σ_e W z zᵀ + (1/l) Σ_{i,b} z zᵀ + λI] P_u = Σ_e W (1 − c) z − (1/l) Σ_{i,b} c z`
//!
//! and the all-cells sums collapse to Gram matrices and column sums:
//! `Σ_{i,b} z zᵀ = l·QᵀQ + n·BᵀB + s_Q s_Bᵀ + s_B s_Qᵀ` and
//! `Σ_{i,b} c z = QᵀQ s_B + BᵀB s_Q`. Items and bins follow by symmetry.

use crate::dataset::EventLog;
use crate::error::Result;
use crate::linalg::{add_outer_upper, axpy, dot, gram, DenseMatrix};

use super::als::{chunked_sum_scalar, run_als, solve_into, solve_rows, with_threads, AlsModel, Block};
use super::data::{Interactions, TrainEvent};
use super::itals::binned_init;
use super::{FactorModel, ModelKind, TimeRep, TrainConfig};

#[derive(Debug, Clone)]
pub struct ItalsxState {
    pub p: DenseMatrix,
    pub q: DenseMatrix,
    pub b: DenseMatrix,
    lambda: f64,
}

impl ItalsxState {
    pub fn new(data: &Interactions, cfg: &TrainConfig) -> Self {
        let (p, q, b) = binned_init(data, cfg);
        Self::with_factors(cfg, p, q, b)
    }

    pub fn with_factors(cfg: &TrainConfig, p: DenseMatrix, q: DenseMatrix, b: DenseMatrix) -> Self {
        Self {
            p,
            q,
            b,
            lambda: cfg.lambda,
        }
    }

    pub fn predict(&self, e: &TrainEvent) -> f64 {
        let (p, q, b) = (
            self.p.row(e.user as usize),
            self.q.row(e.item as usize),
            self.b.row(e.bin as usize),
        );
        dot(p, q) + dot(p, b) + dot(q, b)
    }

    pub fn into_model(self, log: &EventLog, cfg: &TrainConfig, bin_length_secs: f64) -> FactorModel {
        let mut model = FactorModel::empty(ModelKind::Italsx, log, cfg);
        model.p = self.p;
        model.q = self.q;
        model.time = TimeRep::Binned {
            b: self.b,
            bin_length_secs,
        };
        model
    }
}

/// All-cells system of one block given the two fixed blocks `x` (with
/// `nx` rows) and `y`: returns `(Σ z zᵀ, Σ c z)` over every `(x, y)` pair.
fn pair_sums(x: &DenseMatrix, y: &DenseMatrix) -> (DenseMatrix, Vec<f64>) {
    let (gx, gy) = (gram(x), gram(y));
    let (sx, sy) = (x.column_sums(), y.column_sums());
    let k = gx.rows();
    let mut lhs = DenseMatrix::zeros(k, k);
    lhs.add_scaled(y.rows() as f64, &gx).expect("k×k");
    lhs.add_scaled(x.rows() as f64, &gy).expect("k×k");
    for r in 0..k {
        for c in 0..k {
            lhs[(r, c)] += sx[r] * sy[c] + sy[r] * sx[c];
        }
    }
    let mut cross = gx.matvec(&sy);
    let gy_sx = gy.matvec(&sx);
    axpy(1.0, &gy_sx, &mut cross);
    (lhs, cross)
}

#[allow(clippy::too_many_arguments)]
fn update_block<'a, F>(
    target: &mut DenseMatrix,
    x: &DenseMatrix,
    y: &DenseMatrix,
    groups: &[Vec<u32>],
    events: &[TrainEvent],
    inv_l: f64,
    lambda: f64,
    others: F,
) -> Result<()>
where
    F: Fn(&TrainEvent) -> (&'a [f64], &'a [f64]) + Sync + Send,
{
    let k = target.cols();
    let (mut base, cross) = pair_sums(x, y);
    base.scale(inv_l);
    base.add_to_diagonal(lambda);
    let base_rhs: Vec<f64> = cross.iter().map(|v| -inv_l * v).collect();
    solve_rows(target, |row, out| {
        let mut lhs = base.clone();
        let mut rhs = base_rhs.clone();
        let mut z = vec![0.0; k];
        for &idx in &groups[row] {
            let e = &events[idx as usize];
            let (a, b) = others(e);
            for c in 0..k {
                z[c] = a[c] + b[c];
            }
            add_outer_upper(&mut lhs, e.weight, &z);
            axpy(e.weight * (1.0 - dot(a, b)), &z, &mut rhs);
        }
        solve_into(lhs, rhs, out)
    })
}

impl AlsModel for ItalsxState {
    fn blocks(&self) -> &'static [Block] {
        &[Block::Users, Block::Items, Block::Time]
    }

    fn update(&mut self, block: Block, data: &Interactions) -> Result<()> {
        let inv_l = 1.0 / data.n_bins as f64;
        let events = &data.events;
        let lambda = self.lambda;
        match block {
            Block::Users => {
                let (q, b) = (&self.q, &self.b);
                update_block(&mut self.p, q, b, &data.by_user, events, inv_l, lambda, |e| {
                    (q.row(e.item as usize), b.row(e.bin as usize))
                })
            }
            Block::Items => {
                let (p, b) = (&self.p, &self.b);
                update_block(&mut self.q, p, b, &data.by_item, events, inv_l, lambda, |e| {
                    (p.row(e.user as usize), b.row(e.bin as usize))
                })
            }
            Block::Time => {
                let (p, q) = (&self.p, &self.q);
                update_block(&mut self.b, p, q, &data.by_bin, events, inv_l, lambda, |e| {
                    (p.row(e.user as usize), q.row(e.item as usize))
                })
            }
        }
    }

    fn loss(&self, data: &Interactions) -> f64 {
        let observed = chunked_sum_scalar(data.events.len(), |range| {
            data.events[range]
                .iter()
                .map(|e| {
                    let err = 1.0 - self.predict(e);
                    e.weight * err * err
                })
                .sum()
        });
        let (gp, gq, gb) = (gram(&self.p), gram(&self.q), gram(&self.b));
        let (sp, sq, sb) = (self.p.column_sums(), self.q.column_sums(), self.b.column_sums());
        let (m, n, l) = (self.p.rows() as f64, self.q.rows() as f64, self.b.rows() as f64);
        let hsum = |a: &DenseMatrix, b: &DenseMatrix| a.hadamard(b).expect("k×k").sum();
        let squares = l * hsum(&gp, &gq) + n * hsum(&gp, &gb) + m * hsum(&gq, &gb);
        let crosses = dot(&sq, &gp.matvec(&sb)) + dot(&sp, &gq.matvec(&sb)) + dot(&sp, &gb.matvec(&sq));
        let implicit = (squares + 2.0 * crosses) / l;
        let reg = self.lambda
            * (self.p.frobenius_dot(&self.p) + self.q.frobenius_dot(&self.q) + self.b.frobenius_dot(&self.b));
        observed + implicit + reg
    }
}

/// Trains iTALSx on `cfg.bin_days`-day bins.
pub fn train_italsx(log: &EventLog, cfg: &TrainConfig) -> Result<FactorModel> {
    cfg.validate()?;
    let data = Interactions::new(log, cfg)?;
    with_threads(cfg.threads, || {
        let mut state = ItalsxState::new(&data, cfg);
        run_als(&mut state, &data, cfg.iterations, "italsx")?;
        Ok(state.into_model(log, cfg, data.bin_length_secs))
    })?
}
