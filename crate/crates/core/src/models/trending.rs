//! Trending: user-independent popularity over the most recent window.

use crate::dataset::{popularity, EventLog, SECONDS_PER_DAY};
use crate::error::{Error, Result};

use super::{FactorModel, ModelKind, TrainConfig};

/// Scores every item by its event count in `[t_max − window, t_max]`.
pub fn train_trending(log: &EventLog, window_days: f64) -> Result<FactorModel> {
    if !(window_days > 0.0) {
        return Err(Error::InvalidConfig(format!("window must be > 0, got {window_days}")));
    }
    if log.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let window = (window_days * SECONDS_PER_DAY).round() as i64;
    let start = log.t_max().saturating_sub(window);
    let cfg = TrainConfig {
        window_days,
        ..TrainConfig::default()
    };
    let mut model = FactorModel::empty(ModelKind::Trending, log, &cfg);
    model.trending_counts = popularity(log, start, log.t_max())
        .into_iter()
        .map(|c| c as f64)
        .collect();
    Ok(model)
}
