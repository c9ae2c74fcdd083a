//! EASE: a full-rank item-item autoencoder with zero self-weights,
//! `B = I − P̂ · diag(1 / diag(P̂))` where `P̂ = (XᵀX + λI)⁻¹`.
//!
//! Events are unweighted and binarized per (user, item).

use crate::dataset::EventLog;
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, DenseMatrix};

use super::{FactorModel, ModelKind, TrainConfig};

pub const DEFAULT_EASE_MAX_ITEMS: usize = 40_000;

/// Closed-form EASE weights for a binary user × item matrix given as item sets.
pub fn ease_weights(user_items: &[Vec<u32>], n_items: usize, lambda: f64) -> Result<DenseMatrix> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be > 0, got {lambda}")));
    }
    let mut xtx = DenseMatrix::zeros(n_items, n_items);
    for items in user_items {
        for (a, &i) in items.iter().enumerate() {
            for &j in &items[a..] {
                let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
                xtx[(lo as usize, hi as usize)] += 1.0;
            }
        }
    }
    crate::linalg::mirror_upper(&mut xtx);
    xtx.add_to_diagonal(lambda);
    let inverse = Cholesky::factor(&xtx)?.solve(&DenseMatrix::identity(n_items))?;
    let mut b = DenseMatrix::zeros(n_items, n_items);
    for j in 0..n_items {
        let pjj = inverse[(j, j)];
        for i in 0..n_items {
            if i != j {
                b[(i, j)] = -inverse[(i, j)] / pjj;
            }
        }
    }
    Ok(b)
}

/// Trains EASE with the default item cap.
pub fn train_ease(log: &EventLog, lambda: f64) -> Result<FactorModel> {
    let cfg = TrainConfig {
        lambda,
        ..TrainConfig::default()
    };
    train_ease_with_cap(log, lambda, DEFAULT_EASE_MAX_ITEMS, &cfg)
}

/// Trains EASE, refusing catalogues larger than `max_items`.
pub fn train_ease_with_cap(
    log: &EventLog,
    lambda: f64,
    max_items: usize,
    cfg: &TrainConfig,
) -> Result<FactorModel> {
    if log.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if log.n_items() > max_items {
        return Err(Error::ItemCountTooLarge {
            n: log.n_items(),
            cap: max_items,
        });
    }
    let user_items = log.user_item_sets();
    let b = ease_weights(&user_items, log.n_items(), lambda)?;
    let mut model = FactorModel::empty(ModelKind::Ease, log, cfg);
    model.ease_b = Some(b);
    model.user_items = user_items;
    Ok(model)
}
