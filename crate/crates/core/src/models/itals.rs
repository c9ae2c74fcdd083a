//! iTALS: the weighted square loss on a user × item × time-bin tensor.
//!
//! `L = Σ_events W (1 − X̂)² + (1/l) Σ_{u,i,b} X̂² + λ Σ_d ‖F_d − p_d‖²`
//! with `X̂ = (P_u ⊙ Q_i ⊙ B_b)·1` and `p_d` the default factor of dimension `d`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::EventLog;
use crate::error::Result;
use crate::linalg::{add_outer_upper, axpy, gram, DenseMatrix};

use super::als::{
    chunked_sum_scalar, gaussian_matrix, run_als, solve_into, solve_rows, sq_dist_to, with_threads,
    AlsModel, Block,
};
use super::data::{Interactions, TrainEvent};
use super::{triple_dot, DefaultFactors, FactorModel, ModelKind, TimeRep, TrainConfig};

#[derive(Debug, Clone)]
pub struct ItalsState {
    pub p: DenseMatrix,
    pub q: DenseMatrix,
    /// One row per time bin.
    pub b: DenseMatrix,
    lambda: f64,
    defaults: DefaultFactors,
}

/// Initial factors shared by the binned models: Gaussian P and Q, and every
/// bin row set to one Gaussian draw so the model starts time-constant.
pub(crate) fn binned_init(
    data: &Interactions,
    cfg: &TrainConfig,
) -> (DenseMatrix, DenseMatrix, DenseMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = 1.0 / (cfg.k as f64).sqrt();
    let p = gaussian_matrix(&mut rng, data.n_users, cfg.k, std);
    let q = gaussian_matrix(&mut rng, data.n_items, cfg.k, std);
    let row = gaussian_matrix(&mut rng, 1, cfg.k, std);
    let b = DenseMatrix::from_fn(data.n_bins, cfg.k, |_, c| row[(0, c)]);
    (p, q, b)
}

impl ItalsState {
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
            defaults: cfg.default_factor,
        }
    }

    pub fn predict(&self, e: &TrainEvent) -> f64 {
        triple_dot(
            self.p.row(e.user as usize),
            self.q.row(e.item as usize),
            self.b.row(e.bin as usize),
        )
    }

    pub fn into_model(self, log: &EventLog, cfg: &TrainConfig, bin_length_secs: f64) -> FactorModel {
        let mut model = FactorModel::empty(ModelKind::Itals, log, cfg);
        model.p = self.p;
        model.q = self.q;
        model.time = TimeRep::Binned {
            b: self.b,
            bin_length_secs,
        };
        model
    }
}

/// Solves every row of `target` given the two fixed blocks. `groups[row]`
/// lists the event indices touching that row and `others` picks the two
/// fixed factor rows of an event.
#[allow(clippy::too_many_arguments)]
fn update_block<'a, F>(
    target: &mut DenseMatrix,
    implicit: &DenseMatrix,
    groups: &[Vec<u32>],
    events: &[TrainEvent],
    lambda: f64,
    default: f64,
    others: F,
) -> Result<()>
where
    F: Fn(&TrainEvent) -> (&'a [f64], &'a [f64]) + Sync + Send,
{
    let k = target.cols();
    let mut base = implicit.clone();
    base.add_to_diagonal(lambda);
    solve_rows(target, |row, out| {
        let mut lhs = base.clone();
        let mut rhs = vec![lambda * default; k];
        let mut z = vec![0.0; k];
        for &idx in &groups[row] {
            let e = &events[idx as usize];
            let (x, y) = others(e);
            for c in 0..k {
                z[c] = x[c] * y[c];
            }
            add_outer_upper(&mut lhs, e.weight, &z);
            axpy(e.weight, &z, &mut rhs);
        }
        solve_into(lhs, rhs, out)
    })
}

/// `(XᵀX ⊙ YᵀY) · scale`
fn implicit_gram(x: &DenseMatrix, y: &DenseMatrix, scale: f64) -> DenseMatrix {
    let mut g = gram(x).hadamard(&gram(y)).expect("k×k");
    g.scale(scale);
    g
}

impl AlsModel for ItalsState {
    fn blocks(&self) -> &'static [Block] {
        &[Block::Users, Block::Items, Block::Time]
    }

    fn update(&mut self, block: Block, data: &Interactions) -> Result<()> {
        let inv_l = 1.0 / data.n_bins as f64;
        let events = &data.events;
        match block {
            Block::Users => {
                let implicit = implicit_gram(&self.q, &self.b, inv_l);
                let (q, b) = (&self.q, &self.b);
                update_block(
                    &mut self.p,
                    &implicit,
                    &data.by_user,
                    events,
                    self.lambda,
                    self.defaults.users.value(),
                    |e| (q.row(e.item as usize), b.row(e.bin as usize)),
                )
            }
            Block::Items => {
                let implicit = implicit_gram(&self.p, &self.b, inv_l);
                let (p, b) = (&self.p, &self.b);
                update_block(
                    &mut self.q,
                    &implicit,
                    &data.by_item,
                    events,
                    self.lambda,
                    self.defaults.items.value(),
                    |e| (p.row(e.user as usize), b.row(e.bin as usize)),
                )
            }
            Block::Time => {
                let implicit = implicit_gram(&self.p, &self.q, inv_l);
                let (p, q) = (&self.p, &self.q);
                update_block(
                    &mut self.b,
                    &implicit,
                    &data.by_bin,
                    events,
                    self.lambda,
                    self.defaults.time.value(),
                    |e| (p.row(e.user as usize), q.row(e.item as usize)),
                )
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
        let implicit = implicit_gram(&self.p, &self.q, 1.0 / data.n_bins as f64)
            .hadamard(&gram(&self.b))
            .expect("k×k")
            .sum();
        let reg = self.lambda
            * (sq_dist_to(&self.p, self.defaults.users.value())
                + sq_dist_to(&self.q, self.defaults.items.value())
                + sq_dist_to(&self.b, self.defaults.time.value()));
        observed + implicit + reg
    }
}

/// Trains iTALS on `cfg.bin_days`-day bins.
pub fn train_itals(log: &EventLog, cfg: &TrainConfig) -> Result<FactorModel> {
    cfg.validate()?;
    let data = Interactions::new(log, cfg)?;
    with_threads(cfg.threads, || {
        let mut state = ItalsState::new(&data, cfg);
        run_als(&mut state, &data, cfg.iterations, "itals")?;
        Ok(state.into_model(log, cfg, data.bin_length_secs))
    })?
}
