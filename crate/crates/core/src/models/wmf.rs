//! Weighted matrix factorization (iALS) with the all-cells implicit regularizer:
//!
//! `L = Σ_{(u,i) observed} W (1 − P_u·Q_i)² + Σ_{u,i} (P_u·Q_i)² + λ(‖P‖² + ‖Q‖²)`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::EventLog;
use crate::error::Result;
use crate::linalg::{add_outer_upper, dot, gram, hadamard_vec, DenseMatrix};

use super::als::{gaussian_matrix, run_als, solve_into, solve_rows, with_threads, AlsModel, Block};
use super::data::Interactions;
use super::{FactorModel, ModelKind, TimeRep, TrainConfig};

#[derive(Debug, Clone)]
pub struct WmfState {
    pub p: DenseMatrix,
    pub q: DenseMatrix,
    lambda: f64,
    /// Distinct (item, weight) pairs per user; repeated events keep the largest weight.
    by_user: Vec<Vec<(u32, f64)>>,
    by_item: Vec<Vec<(u32, f64)>>,
}

impl WmfState {
    pub fn new(data: &Interactions, cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let std = 1.0 / (cfg.k as f64).sqrt();
        let p = gaussian_matrix(&mut rng, data.n_users, cfg.k, std);
        let q = gaussian_matrix(&mut rng, data.n_items, cfg.k, std);
        Self::with_factors(data, cfg, p, q)
    }

    pub fn with_factors(data: &Interactions, cfg: &TrainConfig, p: DenseMatrix, q: DenseMatrix) -> Self {
        let mut by_user: Vec<Vec<(u32, f64)>> = vec![Vec::new(); data.n_users];
        for e in &data.events {
            by_user[e.user as usize].push((e.item, e.weight));
        }
        let mut by_item: Vec<Vec<(u32, f64)>> = vec![Vec::new(); data.n_items];
        for (u, pairs) in by_user.iter_mut().enumerate() {
            pairs.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
            pairs.dedup_by_key(|pair| pair.0);
            for &(i, w) in pairs.iter() {
                by_item[i as usize].push((u as u32, w));
            }
        }
        Self {
            p,
            q,
            lambda: cfg.lambda,
            by_user,
            by_item,
        }
    }

    /// Distinct observed (user, item, weight) triples.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.by_user
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&(i, w)| (u, i as usize, w)))
    }

    pub fn into_model(self, log: &EventLog, cfg: &TrainConfig) -> FactorModel {
        let mut model = FactorModel::empty(ModelKind::Wmf, log, cfg);
        model.p = self.p;
        model.q = self.q;
        model.time = TimeRep::None;
        model
    }
}

fn update_side(
    target: &mut DenseMatrix,
    other: &DenseMatrix,
    observed: &[Vec<(u32, f64)>],
    lambda: f64,
) -> Result<()> {
    let k = other.cols();
    let mut base = gram(other);
    base.add_to_diagonal(lambda);
    solve_rows(target, |row, out| {
        let mut lhs = base.clone();
        let mut rhs = vec![0.0; k];
        for &(j, w) in &observed[row] {
            let v = other.row(j as usize);
            add_outer_upper(&mut lhs, w, v);
            crate::linalg::axpy(w, v, &mut rhs);
        }
        solve_into(lhs, rhs, out)
    })
}

impl AlsModel for WmfState {
    fn blocks(&self) -> &'static [Block] {
        &[Block::Users, Block::Items]
    }

    fn update(&mut self, block: Block, _data: &Interactions) -> Result<()> {
        match block {
            Block::Users => update_side(&mut self.p, &self.q, &self.by_user, self.lambda),
            Block::Items => update_side(&mut self.q, &self.p, &self.by_item, self.lambda),
            Block::Time => Ok(()),
        }
    }

    fn loss(&self, _data: &Interactions) -> f64 {
        let observed: f64 = self
            .pairs()
            .map(|(u, i, w)| {
                let err = 1.0 - dot(self.p.row(u), self.q.row(i));
                w * err * err
            })
            .sum();
        let implicit = hadamard_vec(gram(&self.p).as_slice(), gram(&self.q).as_slice())
            .iter()
            .sum::<f64>();
        let reg = self.lambda * (self.p.frobenius_dot(&self.p) + self.q.frobenius_dot(&self.q));
        observed + implicit + reg
    }
}

/// Trains WMF by alternating exact user and item solves.
pub fn train_wmf(log: &EventLog, cfg: &TrainConfig) -> Result<FactorModel> {
    cfg.validate()?;
    let data = Interactions::new(log, cfg)?;
    with_threads(cfg.threads, || {
        let mut state = WmfState::new(&data, cfg);
        run_als(&mut state, &data, cfg.iterations, "wmf")?;
        Ok(state.into_model(log, cfg))
    })?
}
