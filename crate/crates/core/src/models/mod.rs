//! The model family and its shared train/score interface.
//!
//! Every ALS model keeps its factors in a state type implementing
//! [`AlsModel`]; training alternates exact block updates and the trained
//! state is frozen into a [`FactorModel`] for scoring and checkpointing.

mod als;
mod checkpoint;
mod data;
mod dmf;
mod dtf;
mod ease;
mod itals;
mod italsx;
mod trending;
mod wmf;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{EventLog, NormalizedTime, TimeAnchors, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::legendre::{LegendreBasis, DEFAULT_KERNEL_SAMPLES};
use crate::linalg::{dot, DenseMatrix, CG_DEFAULT_MAX_ITER, CG_DEFAULT_TOL};

pub use als::{run_als, AlsModel, Block, IterationStats, TrainTrace};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use data::{Interactions, TrainEvent};
pub use dmf::{train_dmf, DmfState};
pub use dtf::{train_dtf, train_dtf_kernel, DtfState};
pub use ease::{ease_weights, train_ease, train_ease_with_cap, DEFAULT_EASE_MAX_ITEMS};
pub use itals::{train_itals, ItalsState};
pub use italsx::{train_italsx, ItalsxState};
pub use trending::train_trending;
pub use wmf::{train_wmf, WmfState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Wmf,
    Itals,
    Italsx,
    Ease,
    Trending,
    Dtf,
    DtfKernel,
    Dmf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::Wmf,
        ModelKind::Itals,
        ModelKind::Italsx,
        ModelKind::Ease,
        ModelKind::Trending,
        ModelKind::Dtf,
        ModelKind::DtfKernel,
        ModelKind::Dmf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Wmf => "wmf",
            ModelKind::Itals => "itals",
            ModelKind::Italsx => "italsx",
            ModelKind::Ease => "ease",
            ModelKind::Trending => "trending",
            ModelKind::Dtf => "dtf",
            ModelKind::DtfKernel => "dtf-kernel",
            ModelKind::Dmf => "dmf",
        }
    }

    pub fn is_binned(self) -> bool {
        matches!(self, ModelKind::Itals | ModelKind::Italsx)
    }

    pub fn is_fit(self) -> bool {
        matches!(self, ModelKind::Dtf | ModelKind::DtfKernel | ModelKind::Dmf)
    }

    pub fn has_time(self) -> bool {
        self.is_binned() || self.is_fit()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == key || (key == "dtfkernel" && *k == ModelKind::DtfKernel))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model {s:?}")))
    }
}

/// Target an embedding block is regularized towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefaultFactor {
    #[default]
    Zero,
    One,
}

impl DefaultFactor {
    #[inline]
    pub fn value(self) -> f64 {
        match self {
            DefaultFactor::Zero => 0.0,
            DefaultFactor::One => 1.0,
        }
    }
}

/// Per-dimension default factors (iTALS only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DefaultFactors {
    pub users: DefaultFactor,
    pub items: DefaultFactor,
    pub time: DefaultFactor,
}

/// All training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Embedding dimension.
    pub k: usize,
    /// Number of Legendre basis functions (fit degree `r - 1`).
    pub r: usize,
    /// Weight of a positive event.
    pub alpha: f64,
    pub lambda: f64,
    /// Ridge on the fit coefficients.
    pub lambda_a: f64,
    /// Kernel width on the normalized time axis.
    pub sigma: f64,
    pub bin_days: f64,
    pub iterations: usize,
    pub seed: u64,
    pub default_factor: DefaultFactors,
    /// Exponential decay of event weights; `None` keeps them uniform.
    pub half_life_days: Option<f64>,
    /// Trending popularity window.
    pub window_days: f64,
    pub kernel_samples: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Worker threads for per-row solves, 0 = all cores.
    pub threads: usize,
    pub ease_max_items: usize,
    pub dmf_budget_bytes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 64,
            r: 20,
            alpha: 10.0,
            lambda: 1.0,
            lambda_a: 1.0,
            sigma: 0.05,
            bin_days: 1.0,
            iterations: 10,
            seed: 42,
            default_factor: DefaultFactors::default(),
            half_life_days: None,
            window_days: 7.0,
            kernel_samples: DEFAULT_KERNEL_SAMPLES,
            cg_tol: CG_DEFAULT_TOL,
            cg_max_iter: CG_DEFAULT_MAX_ITER,
            threads: 0,
            ease_max_items: DEFAULT_EASE_MAX_ITEMS,
            dmf_budget_bytes: 1 << 30,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k == 0 {
            return fail("k must be >= 1".into());
        }
        if self.r == 0 {
            return fail("r must be >= 1".into());
        }
        if !(self.alpha > 0.0) {
            return fail(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.lambda > 0.0) {
            return fail(format!("lambda must be > 0, got {}", self.lambda));
        }
        if !(self.lambda_a >= 0.0) {
            return fail(format!("lambda_a must be >= 0, got {}", self.lambda_a));
        }
        if self.iterations == 0 {
            return fail("iterations must be >= 1".into());
        }
        if !(self.bin_days > 0.0) {
            return fail(format!("bin length must be > 0, got {}", self.bin_days));
        }
        if let Some(h) = self.half_life_days {
            if !(h > 0.0) {
                return fail(format!("half-life must be > 0, got {h}"));
            }
        }
        if !(self.window_days > 0.0) {
            return fail(format!("window must be > 0, got {}", self.window_days));
        }
        Ok(())
    }
}

/// Learned time representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TimeRep {
    None,
    /// One factor row per fixed-length bin.
    Binned { b: DenseMatrix, bin_length_secs: f64 },
    /// Shared polynomial fit coefficients `A` (`r × k`).
    Fit { a: DenseMatrix },
    /// One coefficient matrix per item.
    PerItemFit { a: Vec<DenseMatrix> },
}

/// A trained model, immutable and freely shareable for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub kind: ModelKind,
    pub config: TrainConfig,
    pub anchors: TimeAnchors,
    pub n_users: usize,
    pub n_items: usize,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub p: DenseMatrix,
    pub q: DenseMatrix,
    pub time: TimeRep,
    /// Item-item weights (EASE only).
    pub ease_b: Option<DenseMatrix>,
    /// Training items per user (EASE only).
    pub user_items: Vec<Vec<u32>>,
    /// Windowed counts (Trending only).
    pub trending_counts: Vec<f64>,
}

impl FactorModel {
    pub(crate) fn empty(kind: ModelKind, log: &EventLog, config: &TrainConfig) -> Self {
        Self {
            kind,
            config: config.clone(),
            anchors: log.anchors(),
            n_users: log.n_users(),
            n_items: log.n_items(),
            user_ids: log.user_ids().to_vec(),
            item_ids: log.item_ids().to_vec(),
            p: DenseMatrix::zeros(0, 0),
            q: DenseMatrix::zeros(0, 0),
            time: TimeRep::None,
            ease_b: None,
            user_items: Vec::new(),
            trending_counts: Vec::new(),
        }
    }

    pub fn basis(&self) -> Result<LegendreBasis> {
        LegendreBasis::new(self.config.r)
    }

    /// Maps a timestamp onto the training time axis; a single-instant
    /// training range maps everything to 0.
    pub fn normalize(&self, timestamp: i64) -> NormalizedTime {
        if self.anchors.t_min == self.anchors.t_max {
            return NormalizedTime(0.0);
        }
        self.anchors.normalize(timestamp as f64)
    }

    /// Number of bins for binned models.
    pub fn n_bins(&self) -> Option<usize> {
        match &self.time {
            TimeRep::Binned { b, .. } => Some(b.rows()),
            _ => None,
        }
    }

    /// Bin containing `t`, clamped to the trained bins.
    pub fn bin_for(&self, t: NormalizedTime) -> Option<usize> {
        match &self.time {
            TimeRep::Binned { b, bin_length_secs } => {
                let offset = self.anchors.denormalize(t) - self.anchors.t_min as f64;
                let raw = (offset / bin_length_secs).floor();
                Some(raw.clamp(0.0, (b.rows() - 1) as f64) as usize)
            }
            _ => None,
        }
    }

    fn check_indices(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.n_users {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: user,
                len: self.n_users,
            });
        }
        if item >= self.n_items {
            return Err(Error::IndexOutOfRange {
                what: "item",
                index: item,
                len: self.n_items,
            });
        }
        Ok(())
    }

    /// Predicted relevance of `item` for `user` at normalized time `t`.
    pub fn score(&self, user: usize, item: usize, t: NormalizedTime) -> Result<f64> {
        self.check_indices(user, item)?;
        let pu = || self.p.row(user);
        let qi = || self.q.row(item);
        Ok(match (&self.kind, &self.time) {
            (ModelKind::Wmf, _) => dot(pu(), qi()),
            (ModelKind::Itals, TimeRep::Binned { b, .. }) => {
                let bt = b.row(self.bin_for(t).unwrap_or(0));
                triple_dot(pu(), qi(), bt)
            }
            (ModelKind::Italsx, TimeRep::Binned { b, .. }) => {
                let bt = b.row(self.bin_for(t).unwrap_or(0));
                dot(pu(), qi()) + dot(pu(), bt) + dot(qi(), bt)
            }
            (ModelKind::Ease, _) => {
                let b = self.ease_b.as_ref().expect("EASE model without weights");
                self.user_items[user]
                    .iter()
                    .map(|&j| b[(j as usize, item)])
                    .sum()
            }
            (ModelKind::Trending, _) => self.trending_counts[item],
            (ModelKind::Dtf | ModelKind::DtfKernel, TimeRep::Fit { a }) => {
                let bt = self.basis()?.eval_row(t.value()).times(a);
                triple_dot(pu(), qi(), &bt)
            }
            (ModelKind::Dmf, TimeRep::PerItemFit { a }) => {
                let qt = self.basis()?.eval_row(t.value()).times(&a[item]);
                dot(pu(), &qt)
            }
            (kind, _) => {
                return Err(Error::InvalidConfig(format!(
                    "{kind} model has a mismatched time representation"
                )))
            }
        })
    }
}

#[inline]
pub(crate) fn triple_dot(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(c)
        .map(|((x, y), z)| x * y * z)
        .sum()
}

/// Per-event weights: `alpha` everywhere, or `alpha · 0.5^((t_max - t) / half_life)`.
pub fn event_weights(log: &EventLog, alpha: f64, half_life_days: Option<f64>) -> Vec<f64> {
    match half_life_days {
        None => vec![alpha; log.len()],
        Some(h) => {
            let half_life = h * SECONDS_PER_DAY;
            log.events()
                .iter()
                .map(|e| alpha * 0.5f64.powf((log.t_max() - e.timestamp) as f64 / half_life))
                .collect()
        }
    }
}

/// Trains any model kind on `log`.
pub fn train(kind: ModelKind, log: &EventLog, cfg: &TrainConfig) -> Result<FactorModel> {
    match kind {
        ModelKind::Wmf => train_wmf(log, cfg),
        ModelKind::Itals => train_itals(log, cfg),
        ModelKind::Italsx => train_italsx(log, cfg),
        ModelKind::Ease => train_ease_with_cap(log, cfg.lambda, cfg.ease_max_items, cfg),
        ModelKind::Trending => train_trending(log, cfg.window_days),
        ModelKind::Dtf => train_dtf(log, cfg),
        ModelKind::DtfKernel => train_dtf_kernel(log, cfg),
        ModelKind::Dmf => train_dmf(log, cfg),
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RawEvent;

    fn log_with(ts: &[i64]) -> EventLog {
        EventLog::from_records(
            ts.iter()
                .enumerate()
                .map(|(i, &t)| RawEvent {
                    user: format!("u{i}"),
                    item: "x".into(),
                    timestamp: t,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn decay_halves_every_half_life() {
        let day = SECONDS_PER_DAY as i64;
        let log = log_with(&[0, 10 * day, 20 * day]);
        let w = event_weights(&log, 4.0, Some(10.0));
        // events are time-sorted: 0, 10d, 20d
        assert_eq!(w, vec![1.0, 2.0, 4.0]);
        assert_eq!(event_weights(&log, 4.0, None), vec![4.0; 3]);
    }

    #[test]
    fn model_kind_parses() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
        }
        assert_eq!("DTFKernel".parse::<ModelKind>().unwrap(), ModelKind::DtfKernel);
        assert!("svd".parse::<ModelKind>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lambda: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
