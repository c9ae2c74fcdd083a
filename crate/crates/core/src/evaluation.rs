//! Leave-one-out evaluation on a temporal split.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::adaptations::Adaptations;
use crate::dataset::{NormalizedTime, TemporalSplit};
use crate::error::{Error, Result};
use crate::models::FactorModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Ndcg,
    Mrr,
    Recall,
}

/// A metric with its cutoff, written `ndcg@50`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Metric {
    pub kind: MetricKind,
    pub k: usize,
}

impl Metric {
    pub const fn new(kind: MetricKind, k: usize) -> Self {
        Self { kind, k }
    }

    /// NDCG@50, MRR@20 and Recall@20.
    pub fn defaults() -> Vec<Metric> {
        vec![
            Metric::new(MetricKind::Ndcg, 50),
            Metric::new(MetricKind::Mrr, 20),
            Metric::new(MetricKind::Recall, 20),
        ]
    }

    /// Value for a held-out item at 1-based `rank` (`None` = not ranked).
    pub fn value(self, rank: Option<usize>) -> f64 {
        match rank {
            Some(r) if r >= 1 && r <= self.k => match self.kind {
                MetricKind::Ndcg => 1.0 / ((r + 1) as f64).log2(),
                MetricKind::Mrr => 1.0 / r as f64,
                MetricKind::Recall => 1.0,
            },
            _ => 0.0,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            MetricKind::Ndcg => "ndcg",
            MetricKind::Mrr => "mrr",
            MetricKind::Recall => "recall",
        };
        write!(f, "{name}@{}", self.k)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad metric {s:?}, expected e.g. ndcg@50"));
        let (name, k) = s.trim().split_once('@').ok_or_else(bad)?;
        let kind = match name.trim().to_ascii_lowercase().as_str() {
            "ndcg" => MetricKind::Ndcg,
            "mrr" => MetricKind::Mrr,
            "recall" => MetricKind::Recall,
            _ => return Err(bad()),
        };
        let k: usize = k.trim().parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        Ok(Metric { kind, k })
    }
}

/// Items ranked for one user, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: usize,
    pub ranked_items: Vec<usize>,
    pub k_max: usize,
}

impl RankedList {
    /// 1-based rank of `item`, if listed.
    pub fn rank_of(&self, item: usize) -> Option<usize> {
        self.ranked_items.iter().position(|&i| i == item).map(|p| p + 1)
    }
}

/// Orders by descending score, ties by ascending item index.
fn better(a: (usize, f64), b: (usize, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Ranks `scores` with `excluded` items removed, keeping the top `k_max`.
pub fn rank_scores(user: usize, scores: &[f64], excluded: &[u32], k_max: usize) -> RankedList {
    let mut skip = vec![false; scores.len()];
    for &j in excluded {
        if let Some(flag) = skip.get_mut(j as usize) {
            *flag = true;
        }
    }
    let mut candidates: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| !skip[*i])
        .map(|(i, &s)| (i, s))
        .collect();
    let keep = k_max.min(candidates.len());
    if keep < candidates.len() && keep > 0 {
        candidates.select_nth_unstable_by(keep - 1, |a, b| better(*a, *b));
        candidates.truncate(keep);
    }
    candidates.sort_by(|a, b| better(*a, *b));
    candidates.truncate(keep);
    RankedList {
        user,
        ranked_items: candidates.into_iter().map(|(i, _)| i).collect(),
        k_max,
    }
}

/// Scores every item for `user` at `t` and ranks them. `seen` lists items
/// to exclude (pass `None` to keep them).
pub fn rank_items(
    model: &FactorModel,
    adaptations: &Adaptations,
    user: usize,
    t: NormalizedTime,
    seen: Option<&[u32]>,
    k_max: usize,
) -> Result<RankedList> {
    let scores = adaptations.score_all(model, user, t)?;
    Ok(rank_scores(user, &scores, seen.unwrap_or(&[]), k_max))
}

/// 1-based rank `heldout` would take in the full ranking, or `None` when it
/// is excluded.
pub fn rank_of_item(scores: &[f64], excluded: &[u32], heldout: usize) -> Option<usize> {
    if excluded.iter().any(|&j| j as usize == heldout) {
        return None;
    }
    let mut skip = vec![false; scores.len()];
    for &j in excluded {
        if let Some(flag) = skip.get_mut(j as usize) {
            *flag = true;
        }
    }
    let target = (heldout, scores[heldout]);
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| !skip[i] && i != heldout && better((i, s), target).is_lt())
        .count();
    Some(ahead + 1)
}

pub fn ndcg_at_k(list: &RankedList, heldout: usize, k: usize) -> f64 {
    Metric::new(MetricKind::Ndcg, k).value(list.rank_of(heldout))
}

pub fn mrr_at_k(list: &RankedList, heldout: usize, k: usize) -> f64 {
    Metric::new(MetricKind::Mrr, k).value(list.rank_of(heldout))
}

pub fn recall_at_k(list: &RankedList, heldout: usize, k: usize) -> f64 {
    Metric::new(MetricKind::Recall, k).value(list.rank_of(heldout))
}

/// Mean and 95% Student-t confidence half-width; the half-width is NaN for
/// fewer than two values.
pub fn mean_and_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("n >= 2")
        .inverse_cdf(0.975);
    (mean, t * var.sqrt() / (n as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub metrics: Vec<Metric>,
    pub exclude_seen: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            metrics: Metric::defaults(),
            exclude_seen: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserResult {
    pub user: usize,
    pub heldout: usize,
    /// `None` when the held-out item was excluded as already seen.
    pub rank: Option<usize>,
    /// One value per report metric.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub ci_halfwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Vec<Metric>,
    pub n_users: usize,
    pub per_user: Vec<UserResult>,
    pub summary: Vec<MetricSummary>,
}

impl EvalReport {
    /// Aggregates per-user results; the order of `per_user` does not matter.
    pub fn from_results(metrics: Vec<Metric>, mut per_user: Vec<UserResult>) -> Result<Self> {
        if per_user.is_empty() {
            return Err(Error::NoTestableUsers);
        }
        per_user.sort_by_key(|r| r.user);
        let summary = metrics
            .iter()
            .enumerate()
            .map(|(m, metric)| {
                let values: Vec<f64> = per_user.iter().map(|r| r.values[m]).collect();
                let (mean, ci_halfwidth) = mean_and_ci(&values);
                MetricSummary {
                    metric: metric.to_string(),
                    mean,
                    ci_halfwidth,
                }
            })
            .collect();
        Ok(Self {
            n_users: per_user.len(),
            metrics,
            per_user,
            summary,
        })
    }

    pub fn get(&self, metric: Metric) -> Option<&MetricSummary> {
        let idx = self.metrics.iter().position(|&m| m == metric)?;
        self.summary.get(idx)
    }

    /// Mean of `metric`, if reported.
    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.get(metric).map(|s| s.mean)
    }

    /// JSON form; per-user results are dropped unless `per_user` is set.
    pub fn to_json(&self, per_user: bool) -> Result<String> {
        if per_user {
            return Ok(serde_json::to_string_pretty(self)?);
        }
        let trimmed = EvalReport {
            per_user: Vec::new(),
            ..self.clone()
        };
        Ok(serde_json::to_string_pretty(&trimmed)?)
    }
}

/// Evaluates every testable user of `split` on its held-out event.
pub fn evaluate(
    model: &FactorModel,
    adaptations: &Adaptations,
    split: &TemporalSplit,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if model.n_users != split.train.n_users() || model.n_items != split.train.n_items() {
        return Err(Error::DimensionMismatch(format!(
            "model has {}×{} users×items, split training log {}×{}",
            model.n_users,
            model.n_items,
            split.train.n_users(),
            split.train.n_items()
        )));
    }
    let testable: Vec<(usize, i64, usize)> = split
        .testable_users()
        .map(|(u, e)| (u, e.timestamp, e.item as usize))
        .collect();
    if testable.is_empty() {
        return Err(Error::NoTestableUsers);
    }
    let seen = if options.exclude_seen {
        split.train.user_item_sets()
    } else {
        Vec::new()
    };
    let per_user = testable
        .par_iter()
        .map(|&(user, ts, heldout)| {
            let t = model.normalize(ts);
            let scores = adaptations.score_all(model, user, t)?;
            let excluded: &[u32] = seen.get(user).map_or(&[], Vec::as_slice);
            let rank = rank_of_item(&scores, excluded, heldout);
            Ok(UserResult {
                user,
                heldout,
                rank,
                values: options.metrics.iter().map(|m| m.value(rank)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_results(options.metrics.clone(), per_user)
}

/// One labelled report per CSV row: `label,<metric>,<metric>_ci,...`.
pub fn write_reports_csv(rows: &[(String, &EvalReport)], path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    if let Some((_, first)) = rows.first() {
        let mut header = vec!["label".to_string(), "users".to_string()];
        for m in &first.metrics {
            header.push(m.to_string());
            header.push(format!("{m}_ci"));
        }
        writer.write_record(&header)?;
    }
    for (label, report) in rows {
        let mut record = vec![label.clone(), report.n_users.to_string()];
        for s in &report.summary {
            record.push(format!("{}", s.mean));
            record.push(format!("{}", s.ci_halfwidth));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
