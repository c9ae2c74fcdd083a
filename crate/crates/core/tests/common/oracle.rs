//! Block-level oracles: every ALS block update must land on the exact
//! minimizer of the dense loss with the other blocks fixed.

use dtf_core::legendre::KernelMoments;
use dtf_core::linalg::DenseMatrix;
use dtf_core::models::{
    AlsModel, Block, DmfState, DtfState, Interactions, ItalsState, ItalsxState, TrainConfig, WmfState,
};

use super::{
    dmf_loss, dtf_kernel_loss, dtf_loss, event_moments, flatten, itals_loss, italsx_loss, newton_minimizer,
    random_matrix, rel_diff, rng, toy_config, toy_interactions, unflatten, with_values, wmf_loss,
};

/// A seeded toy problem.
pub struct Toy {
    pub data: Interactions,
    pub cfg: TrainConfig,
    pub moments: Vec<KernelMoments>,
    pub seed: u64,
}

impl Toy {
    pub fn new(m: usize, n: usize, l: usize, k: usize, r: usize, events: usize, seed: u64) -> Self {
        let data = toy_interactions(m, n, l, events, seed);
        let cfg = toy_config(k, r);
        let moments = event_moments(&data, &cfg);
        Self {
            data,
            cfg,
            moments,
            seed,
        }
    }

    fn factors(&self, salt: u64, rows: usize) -> DenseMatrix {
        let mut r = rng(self.seed * 31 + salt);
        random_matrix(&mut r, rows, self.cfg.k, 0.8)
    }

    pub fn wmf(&self) -> WmfState {
        let (p, q) = (self.factors(1, self.data.n_users), self.factors(2, self.data.n_items));
        WmfState::with_factors(&self.data, &self.cfg, p, q)
    }

    pub fn itals(&self) -> ItalsState {
        let b = self.factors(3, self.data.n_bins);
        let (p, q) = (self.factors(1, self.data.n_users), self.factors(2, self.data.n_items));
        ItalsState::with_factors(&self.cfg, p, q, b)
    }

    pub fn italsx(&self) -> ItalsxState {
        let b = self.factors(3, self.data.n_bins);
        let (p, q) = (self.factors(1, self.data.n_users), self.factors(2, self.data.n_items));
        ItalsxState::with_factors(&self.cfg, p, q, b)
    }

    pub fn dtf(&self, kernel: bool) -> DtfState {
        let mut r = rng(self.seed * 31 + 4);
        let a = random_matrix(&mut r, self.cfg.r, self.cfg.k, 0.8);
        let (p, q) = (self.factors(1, self.data.n_users), self.factors(2, self.data.n_items));
        DtfState::with_factors(&self.data, &self.cfg, kernel, p, q, a).unwrap()
    }

    pub fn dmf(&self) -> DmfState {
        let mut r = rng(self.seed * 31 + 5);
        let a = (0..self.data.n_items)
            .map(|_| random_matrix(&mut r, self.cfg.r, self.cfg.k, 0.8))
            .collect();
        DmfState::with_factors(&self.data, &self.cfg, self.factors(1, self.data.n_users), a).unwrap()
    }
}

/// Read/write access to one block as a flat vector plus the dense loss.
pub trait DenseOracle: AlsModel + Clone {
    fn get(&self, block: Block) -> Vec<f64>;
    fn set(&mut self, block: Block, values: &[f64]);
    fn dense_loss(&self, toy: &Toy) -> f64;
}

fn set_matrix(target: &mut DenseMatrix, values: &[f64]) {
    *target = with_values(target, values);
}

impl DenseOracle for WmfState {
    fn get(&self, block: Block) -> Vec<f64> {
        match block {
            Block::Users => self.p.as_slice().to_vec(),
            _ => self.q.as_slice().to_vec(),
        }
    }
    fn set(&mut self, block: Block, values: &[f64]) {
        match block {
            Block::Users => set_matrix(&mut self.p, values),
            _ => set_matrix(&mut self.q, values),
        }
    }
    fn dense_loss(&self, toy: &Toy) -> f64 {
        wmf_loss(&toy.data, &toy.cfg, &self.p, &self.q)
    }
}

macro_rules! binned_oracle {
    ($state:ty, $loss:ident) => {
        impl DenseOracle for $state {
            fn get(&self, block: Block) -> Vec<f64> {
                match block {
                    Block::Users => self.p.as_slice().to_vec(),
                    Block::Items => self.q.as_slice().to_vec(),
                    Block::Time => self.b.as_slice().to_vec(),
                }
            }
            fn set(&mut self, block: Block, values: &[f64]) {
                match block {
                    Block::Users => set_matrix(&mut self.p, values),
                    Block::Items => set_matrix(&mut self.q, values),
                    Block::Time => set_matrix(&mut self.b, values),
                }
            }
            fn dense_loss(&self, toy: &Toy) -> f64 {
                $loss(&toy.data, &toy.cfg, &self.p, &self.q, &self.b)
            }
        }
    };
}

binned_oracle!(ItalsState, itals_loss);
binned_oracle!(ItalsxState, italsx_loss);

impl DenseOracle for DtfState {
    fn get(&self, block: Block) -> Vec<f64> {
        match block {
            Block::Users => self.p.as_slice().to_vec(),
            Block::Items => self.q.as_slice().to_vec(),
            Block::Time => self.a.as_slice().to_vec(),
        }
    }
    fn set(&mut self, block: Block, values: &[f64]) {
        match block {
            Block::Users => set_matrix(&mut self.p, values),
            Block::Items => set_matrix(&mut self.q, values),
            Block::Time => set_matrix(&mut self.a, values),
        }
    }
    fn dense_loss(&self, toy: &Toy) -> f64 {
        if self.is_kernel() {
            dtf_kernel_loss(&toy.data, &toy.cfg, &toy.moments, &self.p, &self.q, &self.a)
        } else {
            dtf_loss(&toy.data, &toy.cfg, &self.p, &self.q, &self.a)
        }
    }
}

impl DenseOracle for DmfState {
    fn get(&self, block: Block) -> Vec<f64> {
        match block {
            Block::Users => self.p.as_slice().to_vec(),
            _ => flatten(&self.a),
        }
    }
    fn set(&mut self, block: Block, values: &[f64]) {
        match block {
            Block::Users => set_matrix(&mut self.p, values),
            _ => self.a = unflatten(&self.a, values),
        }
    }
    fn dense_loss(&self, toy: &Toy) -> f64 {
        dmf_loss(&toy.data, &toy.cfg, &self.p, &self.a)
    }
}

/// Relative distance between the library's update of `block` and the
/// Newton minimizer of the dense loss.
pub fn block_error<S: DenseOracle>(state: &S, toy: &Toy, block: Block) -> f64 {
    let x0 = state.get(block);
    let target = newton_minimizer(
        |x| {
            let mut s = state.clone();
            s.set(block, x);
            s.dense_loss(toy)
        },
        &x0,
    );
    let mut updated = state.clone();
    updated.update(block, &toy.data).unwrap();
    rel_diff(&updated.get(block), &target)
}

/// Largest block error over one sweep, updating in place between blocks.
pub fn sweep_block_errors<S: DenseOracle>(state: &mut S, toy: &Toy) -> Vec<(Block, f64)> {
    let mut out = Vec::new();
    for &block in state.blocks() {
        out.push((block, block_error(state, toy, block)));
        state.update(block, &toy.data).unwrap();
    }
    out
}

/// Dense loss before and after each of `updates` block updates.
pub fn loss_trace<S: DenseOracle>(state: &mut S, toy: &Toy, updates: usize) -> Vec<f64> {
    let mut losses = vec![state.dense_loss(toy)];
    let blocks = state.blocks();
    for j in 0..updates {
        state.update(blocks[j % blocks.len()], &toy.data).unwrap();
        losses.push(state.dense_loss(toy));
    }
    losses
}

/// Largest increase between consecutive losses (negative when strictly decreasing).
pub fn worst_increase(losses: &[f64]) -> f64 {
    losses
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
}
