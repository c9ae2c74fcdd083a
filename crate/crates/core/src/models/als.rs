use std::ops::Range;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mirror_upper, Cholesky, DenseMatrix};

use super::data::Interactions;

/// A factor block updated by one ALS step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Users,
    Items,
    Time,
}

/// Factor state of an ALS-trained model.
///
/// `update` replaces one block by the exact minimizer of [`loss`] with the
/// other blocks held fixed, so the loss never increases.
///
/// [`loss`]: AlsModel::loss
pub trait AlsModel {
    /// Block order of one sweep.
    fn blocks(&self) -> &'static [Block];

    fn update(&mut self, block: Block, data: &Interactions) -> Result<()>;

    /// Full training objective.
    fn loss(&self, data: &Interactions) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub seconds: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub iterations: Vec<IterationStats>,
}

/// Runs `iterations` full sweeps, logging wall time and loss per sweep.
pub fn run_als<S: AlsModel>(
    state: &mut S,
    data: &Interactions,
    iterations: usize,
    label: &str,
) -> Result<TrainTrace> {
    let mut trace = TrainTrace::default();
    for iteration in 0..iterations {
        let start = Instant::now();
        for &block in state.blocks() {
            state.update(block, data)?;
        }
        let seconds = start.elapsed().as_secs_f64();
        let loss = state.loss(data);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                initial: 0.0,
                current: loss,
            });
        }
        log::info!("{label}: iteration {} took {seconds:.3}s, loss {loss:.6e}", iteration + 1);
        trace.iterations.push(IterationStats {
            iteration: iteration + 1,
            seconds,
            loss,
        });
    }
    Ok(trace)
}

/// Runs `f` on a pool of `threads` workers (0 = the global pool).
pub(crate) fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub(crate) fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> DenseMatrix {
    let normal = Normal::new(0.0, std).expect("finite std");
    DenseMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// Recomputes every row of `target` independently; `f` fills one row.
pub(crate) fn solve_rows<F>(target: &mut DenseMatrix, f: F) -> Result<()>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync + Send,
{
    let cols = target.cols();
    if cols == 0 || target.rows() == 0 {
        return Ok(());
    }
    target
        .as_mut_slice()
        .par_chunks_mut(cols)
        .enumerate()
        .try_for_each(|(i, row)| f(i, row))
}

/// Solves `lhs · x = rhs` into `out`; only the upper triangle of `lhs` is read.
pub(crate) fn solve_into(mut lhs: DenseMatrix, mut rhs: Vec<f64>, out: &mut [f64]) -> Result<()> {
    mirror_upper(&mut lhs);
    Cholesky::factor(&lhs)?.solve_in_place(&mut rhs);
    out.copy_from_slice(&rhs);
    Ok(())
}

const REDUCE_CHUNK: usize = 2048;

/// Sums per-chunk partial matrices over `0..n` in a fixed order, so the
/// result does not depend on the number of worker threads.
pub(crate) fn chunked_sum<F>(n: usize, rows: usize, cols: usize, f: F) -> DenseMatrix
where
    F: Fn(Range<usize>, &mut DenseMatrix) + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let parts: Vec<DenseMatrix> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = DenseMatrix::zeros(rows, cols);
            f(c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(n), &mut acc);
            acc
        })
        .collect();
    let mut total = DenseMatrix::zeros(rows, cols);
    for part in &parts {
        total.add_assign(part).expect("same shape");
    }
    total
}

/// Same as [`chunked_sum`] for a scalar.
pub(crate) fn chunked_sum_scalar<F>(n: usize, f: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let parts: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| f(c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(n)))
        .collect();
    parts.iter().sum()
}

/// `‖M − d·1‖²_F`
pub(crate) fn sq_dist_to(m: &DenseMatrix, target: f64) -> f64 {
    m.as_slice().iter().map(|v| (v - target) * (v - target)).sum()
}
