//! Prediction-time adaptations: popularity rescaling and strategies for
//! choosing the time factor when predicting past the training range.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{popularity, EventLog, NormalizedTime, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::models::{FactorModel, TimeRep};

/// Additive smoothing applied to both popularity counts.
pub const POPULARITY_SMOOTHING: f64 = 1.0;

/// Multiplies scores by `((local + ε) / (global + ε))^ν`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityScaler {
    pub nu: f64,
    pub local_window_days: f64,
    pub global_pop: Vec<f64>,
    pub local_pop: Vec<f64>,
    pub smoothing: f64,
}

impl PopularityScaler {
    pub fn new(nu: f64, local_window_days: f64, global_pop: Vec<f64>, local_pop: Vec<f64>) -> Result<Self> {
        if !(nu >= 0.0) {
            return Err(Error::InvalidConfig(format!("nu must be >= 0, got {nu}")));
        }
        if global_pop.len() != local_pop.len() {
            return Err(Error::DimensionMismatch(format!(
                "global popularity has {} items, local {}",
                global_pop.len(),
                local_pop.len()
            )));
        }
        Ok(Self {
            nu,
            local_window_days,
            global_pop,
            local_pop,
            smoothing: POPULARITY_SMOOTHING,
        })
    }

    /// Global counts over the whole log and local counts over its last
    /// `window_days` days.
    pub fn from_log(log: &EventLog, nu: f64, window_days: f64) -> Result<Self> {
        if !(window_days > 0.0) {
            return Err(Error::InvalidConfig(format!("window must be > 0, got {window_days}")));
        }
        let as_f64 = |v: Vec<u64>| v.into_iter().map(|c| c as f64).collect::<Vec<_>>();
        let global = as_f64(popularity(log, log.t_min(), log.t_max()));
        let start = log.t_max().saturating_sub((window_days * SECONDS_PER_DAY).round() as i64);
        let local = as_f64(popularity(log, start, log.t_max()));
        Self::new(nu, window_days, global, local)
    }

    pub fn n_items(&self) -> usize {
        self.global_pop.len()
    }

    /// Smoothed local-to-global ratio of `item`.
    pub fn ratio(&self, item: usize) -> f64 {
        (self.local_pop[item] + self.smoothing) / (self.global_pop[item] + self.smoothing)
    }

    pub fn factor(&self, item: usize) -> f64 {
        self.ratio(item).powf(self.nu)
    }
}

/// Rescales `scores` in place (sign is preserved since factors are positive).
pub fn apply_popularity_scaling(scores: &mut [f64], scaler: &PopularityScaler) -> Result<()> {
    if scores.len() != scaler.n_items() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} items",
            scores.len(),
            scaler.n_items()
        )));
    }
    if scaler.nu == 0.0 {
        return Ok(());
    }
    for (item, s) in scores.iter_mut().enumerate() {
        *s *= scaler.factor(item);
    }
    Ok(())
}

/// How the time factor is chosen at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", content = "n", rename_all = "kebab-case")]
pub enum TimeStrategy {
    /// The final bin, or the fit at `t = 1`.
    LastFactor,
    /// Mean of the last `n` bins, or of the fit at the last `n` day centres.
    LastN(usize),
    /// Mean over all bins, or the time average of the fit.
    DropTime,
    /// The fit at the actual prediction time, possibly past `t = 1`.
    ExtrapolateFit,
}

impl TimeStrategy {
    pub fn validate(self) -> Result<Self> {
        match self {
            TimeStrategy::LastN(0) => Err(Error::InvalidConfig("last-n requires n >= 1".into())),
            other => Ok(other),
        }
    }
}

impl fmt::Display for TimeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeStrategy::LastFactor => f.write_str("last"),
            TimeStrategy::LastN(n) => write!(f, "last-{n}"),
            TimeStrategy::DropTime => f.write_str("drop-time"),
            TimeStrategy::ExtrapolateFit => f.write_str("extrapolate"),
        }
    }
}

impl FromStr for TimeStrategy {
    type Err = Error;

    /// Accepts `last`, `last-n` (n = 7), `last-<n>`, `drop-time`, `extrapolate`.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let strategy = match key.as_str() {
            "last" | "last-factor" => TimeStrategy::LastFactor,
            "last-n" => TimeStrategy::LastN(7),
            "drop-time" | "drop" => TimeStrategy::DropTime,
            "extrapolate" | "extrapolate-fit" => TimeStrategy::ExtrapolateFit,
            other => match other.strip_prefix("last-").map(str::parse::<usize>) {
                Some(Ok(n)) => TimeStrategy::LastN(n),
                _ => return Err(Error::InvalidConfig(format!("unknown strategy {s:?}"))),
            },
        };
        strategy.validate()
    }
}

/// Time factor chosen by a strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum EffectiveTimeFactor {
    /// One k-vector shared by all items (binned models and shared fits).
    Shared(Vec<f64>),
    /// One k-vector per item (per-item fits).
    PerItem(DenseMatrix),
}

/// Basis-space weights `w` such that the strategy's time factor is `w · A`.
fn fit_weights(model: &FactorModel, strategy: TimeStrategy, t: NormalizedTime) -> Result<Vec<f64>> {
    let basis = model.basis()?;
    let r = basis.order();
    Ok(match strategy {
        TimeStrategy::LastFactor => basis.eval_row(1.0).values,
        TimeStrategy::ExtrapolateFit => basis.eval_row(t.value()).values,
        TimeStrategy::DropTime => {
            // Every Legendre polynomial of degree ≥ 1 averages to zero.
            let mut w = vec![0.0; r];
            w[0] = 1.0;
            w
        }
        TimeStrategy::LastN(n) => {
            let day = model.anchors.day_length();
            let mut w = vec![0.0; r];
            for j in 0..n {
                let centre = 1.0 - (j as f64 + 0.5) * day;
                let row = basis.eval_row(centre);
                crate::linalg::axpy(1.0 / n as f64, &row.values, &mut w);
            }
            w
        }
    })
}

/// The time factor `model` uses under `strategy` for a prediction at `t`.
pub fn effective_time_factor(
    model: &FactorModel,
    strategy: TimeStrategy,
    t: NormalizedTime,
) -> Result<EffectiveTimeFactor> {
    let strategy = strategy.validate()?;
    match &model.time {
        TimeRep::None => Err(Error::StrategyUnsupported(format!(
            "{} has no time factors",
            model.kind
        ))),
        TimeRep::Binned { b, .. } => {
            let l = b.rows();
            let mean_of = |range: std::ops::Range<usize>| {
                let mut acc = vec![0.0; b.cols()];
                let count = range.len() as f64;
                for row in range {
                    crate::linalg::axpy(1.0 / count, b.row(row), &mut acc);
                }
                acc
            };
            match strategy {
                TimeStrategy::LastFactor => Ok(EffectiveTimeFactor::Shared(b.row(l - 1).to_vec())),
                TimeStrategy::LastN(n) => Ok(EffectiveTimeFactor::Shared(mean_of(l.saturating_sub(n)..l))),
                TimeStrategy::DropTime => Ok(EffectiveTimeFactor::Shared(mean_of(0..l))),
                TimeStrategy::ExtrapolateFit => Err(Error::StrategyUnsupported(
                    "extrapolation needs a fitted time curve, not bins".into(),
                )),
            }
        }
        TimeRep::Fit { a } => {
            let w = fit_weights(model, strategy, t)?;
            Ok(EffectiveTimeFactor::Shared(a.vecmat(&w)))
        }
        TimeRep::PerItemFit { a } => {
            let w = fit_weights(model, strategy, t)?;
            let k = a.first().map_or(0, DenseMatrix::cols);
            let mut out = DenseMatrix::zeros(a.len(), k);
            for (item, ai) in a.iter().enumerate() {
                out.row_mut(item).copy_from_slice(&ai.vecmat(&w));
            }
            Ok(EffectiveTimeFactor::PerItem(out))
        }
    }
}

/// Prediction-time settings applied when ranking.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Adaptations {
    /// `None` scores at the requested time as trained.
    pub strategy: Option<TimeStrategy>,
    pub scaler: Option<PopularityScaler>,
}

impl Adaptations {
    pub fn none() -> Self {
        Self::default()
    }

    /// Scores every item for `user` at `t` under these adaptations.
    pub fn score_all(&self, model: &FactorModel, user: usize, t: NormalizedTime) -> Result<Vec<f64>> {
        let mut scores = match self.strategy {
            Some(strategy) if model.kind.has_time() => {
                let factor = effective_time_factor(model, strategy, t)?;
                score_with_factor(model, user, &factor)?
            }
            _ => (0..model.n_items)
                .map(|item| model.score(user, item, t))
                .collect::<Result<Vec<_>>>()?,
        };
        if let Some(scaler) = &self.scaler {
            apply_popularity_scaling(&mut scores, scaler)?;
        }
        Ok(scores)
    }
}

/// Scores all items for `user` with an explicit time factor.
pub fn score_with_factor(
    model: &FactorModel,
    user: usize,
    factor: &EffectiveTimeFactor,
) -> Result<Vec<f64>> {
    if user >= model.n_users {
        return Err(Error::IndexOutOfRange {
            what: "user",
            index: user,
            len: model.n_users,
        });
    }
    let pu = model.p.row(user);
    let dot = crate::linalg::dot;
    match (model.kind, factor) {
        (crate::models::ModelKind::Italsx, EffectiveTimeFactor::Shared(b)) => {
            let pb = dot(pu, b);
            Ok((0..model.n_items)
                .map(|i| {
                    let qi = model.q.row(i);
                    dot(pu, qi) + pb + dot(qi, b)
                })
                .collect())
        }
        (_, EffectiveTimeFactor::Shared(b)) => Ok((0..model.n_items)
            .map(|i| crate::models::triple_dot(pu, model.q.row(i), b))
            .collect()),
        (_, EffectiveTimeFactor::PerItem(qt)) => Ok((0..model.n_items).map(|i| dot(pu, qt.row(i))).collect()),
    }
}
