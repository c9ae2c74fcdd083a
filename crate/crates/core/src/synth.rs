//! Synthetic event logs with planted, time-varying item relevance.
//!
//! Each item `i` has a relevance curve `baseline + height · exp(−((t − centre)/width)²)`
//! on the normalized axis and belongs to cluster `i mod n_clusters`; user
//! `u` belongs to cluster `u mod n_clusters`. An event is drawn as a
//! uniform time and a uniform user, and the item is then chosen with
//! probability proportional to `affinity(u, i) · curve_i(t)`. Draws are
//! accepted with probability proportional to the total weight at that
//! (time, user), which makes every item's event-time density follow its
//! own curve.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{EventLog, RawEvent, TimeAnchors};
use crate::error::{Error, Result};

/// Planted relevance curve of one item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemCurve {
    pub center: f64,
    pub width: f64,
    pub height: f64,
    pub baseline: f64,
}

impl ItemCurve {
    pub fn flat(level: f64) -> Self {
        Self {
            center: 0.0,
            width: 1.0,
            height: 0.0,
            baseline: level,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        let z = (t - self.center) / self.width;
        self.baseline + self.height * (-z * z).exp()
    }

    /// Upper bound of the curve.
    pub fn peak(&self) -> f64 {
        self.baseline + self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_clusters: usize,
    /// One curve per item.
    pub curves: Vec<ItemCurve>,
    /// Relative weight of in-cluster items (out-of-cluster items weigh 1).
    pub affinity: f64,
    pub events_total: usize,
    pub seed: u64,
    /// Epoch seconds mapped to normalized time −1 and 1.
    pub t_start: i64,
    pub t_end: i64,
}

/// Default epoch span: 2023-01-01 plus 120 days.
pub const DEFAULT_T_START: i64 = 1_672_531_200;
pub const DEFAULT_SPAN_DAYS: i64 = 120;

impl SynthSpec {
    pub fn n_items(&self) -> usize {
        self.curves.len()
    }

    /// Items with one random bump each (centres in [−0.8, 0.8]).
    pub fn random_bumps(
        n_users: usize,
        n_items: usize,
        n_clusters: usize,
        events_total: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
        let curves = (0..n_items)
            .map(|_| ItemCurve {
                center: rng.random_range(-0.8..0.8),
                width: rng.random_range(0.1..0.25),
                height: rng.random_range(2.0..4.0),
                baseline: 0.05,
            })
            .collect();
        Self::with_curves(n_users, n_clusters, curves, events_total, seed)
    }

    /// Half the items are popular early and fade, the other half rise late,
    /// so item popularity swaps around the middle of the range.
    pub fn popularity_swap(n_users: usize, n_items: usize, events_total: usize, seed: u64) -> Self {
        let curves = (0..n_items)
            .map(|i| {
                let early = i % 2 == 0;
                ItemCurve {
                    center: if early { -1.0 } else { 1.0 },
                    width: 0.8,
                    height: 4.0,
                    baseline: 0.05,
                }
            })
            .collect();
        Self::with_curves(n_users, 1, curves, events_total, seed)
    }

    pub fn with_curves(
        n_users: usize,
        n_clusters: usize,
        curves: Vec<ItemCurve>,
        events_total: usize,
        seed: u64,
    ) -> Self {
        Self {
            n_users,
            n_clusters,
            curves,
            affinity: 4.0,
            events_total,
            seed,
            t_start: DEFAULT_T_START,
            t_end: DEFAULT_T_START + DEFAULT_SPAN_DAYS * 86_400,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.n_users == 0 || self.curves.is_empty() {
            return fail("need at least one user and one item".into());
        }
        if self.n_clusters == 0 {
            return fail("need at least one cluster".into());
        }
        if !(self.affinity > 0.0) {
            return fail(format!("affinity must be > 0, got {}", self.affinity));
        }
        if self.t_start >= self.t_end {
            return fail("t_start must precede t_end".into());
        }
        for (i, c) in self.curves.iter().enumerate() {
            if !(c.width > 0.0) || !(c.height >= 0.0) || !(c.baseline >= 0.0) || c.peak() <= 0.0 {
                return fail(format!("item {i}: invalid curve {c:?}"));
            }
        }
        Ok(())
    }

    pub fn user_cluster(&self, user: usize) -> usize {
        user % self.n_clusters
    }

    pub fn item_cluster(&self, item: usize) -> usize {
        item % self.n_clusters
    }

    pub fn affinity_of(&self, user: usize, item: usize) -> f64 {
        if self.user_cluster(user) == self.item_cluster(item) {
            self.affinity
        } else {
            1.0
        }
    }

    pub fn anchors(&self) -> TimeAnchors {
        TimeAnchors {
            t_min: self.t_start,
            t_max: self.t_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedItem {
    pub id: String,
    pub cluster: usize,
    pub curve: ItemCurve,
}

/// Ground truth written next to a synthetic log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub t_start: i64,
    pub t_end: i64,
    pub n_clusters: usize,
    pub affinity: f64,
    pub items: Vec<PlantedItem>,
}

impl GroundTruth {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub log: EventLog,
    pub truth: GroundTruth,
}

/// Samples `spec.events_total` events.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_items = spec.n_items();
    let max_affinity = spec.affinity.max(1.0);
    let bound: f64 = spec.curves.iter().map(|c| max_affinity * c.peak()).sum();
    let span = (spec.t_end - spec.t_start) as f64;
    let mut weights = vec![0.0; n_items];
    let mut records = Vec::with_capacity(spec.events_total);
    while records.len() < spec.events_total {
        let t: f64 = rng.random_range(-1.0..=1.0);
        let user = rng.random_range(0..spec.n_users);
        let mut total = 0.0;
        for (i, curve) in spec.curves.iter().enumerate() {
            weights[i] = spec.affinity_of(user, i) * curve.value(t);
            total += weights[i];
        }
        if rng.random::<f64>() * bound >= total {
            continue;
        }
        let mut pick = rng.random::<f64>() * total;
        let mut item = n_items - 1;
        for (i, &w) in weights.iter().enumerate() {
            if pick < w {
                item = i;
                break;
            }
            pick -= w;
        }
        let timestamp = spec.t_start + ((t + 1.0) * 0.5 * span).round() as i64;
        records.push(RawEvent {
            user: format!("u{user}"),
            item: format!("i{item}"),
            timestamp,
        });
    }
    let log = EventLog::from_records(records)?;
    let truth = GroundTruth {
        t_start: spec.t_start,
        t_end: spec.t_end,
        n_clusters: spec.n_clusters,
        affinity: spec.affinity,
        items: spec
            .curves
            .iter()
            .enumerate()
            .map(|(i, &curve)| PlantedItem {
                id: format!("i{i}"),
                cluster: spec.item_cluster(i),
                curve,
            })
            .collect(),
    };
    Ok(SynthOutput { log, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_peaks_at_centre() {
        let c = ItemCurve {
            center: 0.3,
            width: 0.1,
            height: 2.0,
            baseline: 0.5,
        };
        assert_eq!(c.value(0.3), 2.5);
        assert!(c.value(0.6) < c.value(0.35));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SynthSpec::random_bumps(10, 4, 2, 100, 1);
        spec.curves[0].width = 0.0;
        assert!(generate(&spec).is_err());
        let spec = SynthSpec::with_curves(10, 0, vec![ItemCurve::flat(1.0)], 10, 1);
        assert!(generate(&spec).is_err());
    }
}
