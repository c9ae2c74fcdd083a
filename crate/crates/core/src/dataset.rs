//! Event-log ingestion, time normalization, temporal splitting and binning.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// One interaction with dense user/item indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub user: u32,
    pub item: u32,
    pub timestamp: i64,
}

/// An interaction keyed by external identifiers, before index assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

/// Immutable, time-sorted interaction log with dense indices.
///
/// Indices are assigned by first appearance in `(timestamp, user_id, item_id)`
/// order, so the same set of records always yields the same log regardless
/// of input row order.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
    n_users: usize,
    n_items: usize,
    t_min: i64,
    t_max: i64,
    user_histories: Vec<Vec<u32>>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
}

impl EventLog {
    /// Builds a log whose time range is the extent of its events.
    pub fn from_records(records: Vec<RawEvent>) -> Result<Self> {
        Self::build(records, None)
    }

    /// Builds a log with an explicit time range enclosing all events.
    pub fn from_records_with_range(records: Vec<RawEvent>, t_min: i64, t_max: i64) -> Result<Self> {
        Self::build(records, Some((t_min, t_max)))
    }

    fn build(mut records: Vec<RawEvent>, range: Option<(i64, i64)>) -> Result<Self> {
        records.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.user.cmp(&b.user))
                .then_with(|| a.item.cmp(&b.item))
        });
        records.dedup();
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }

        let mut user_index: HashMap<String, u32> = HashMap::new();
        let mut item_index: HashMap<String, u32> = HashMap::new();
        let mut user_ids = Vec::new();
        let mut item_ids = Vec::new();
        let mut events = Vec::with_capacity(records.len());
        for rec in records {
            let next_user = user_ids.len() as u32;
            let user = *user_index.entry(rec.user.clone()).or_insert_with(|| {
                user_ids.push(rec.user.clone());
                next_user
            });
            let next_item = item_ids.len() as u32;
            let item = *item_index.entry(rec.item.clone()).or_insert_with(|| {
                item_ids.push(rec.item.clone());
                next_item
            });
            events.push(Event {
                user,
                item,
                timestamp: rec.timestamp,
            });
        }
        // records were ordered by external id within a timestamp; settle on index order
        events.sort_by_key(|e| (e.timestamp, e.user, e.item));

        let first = events[0].timestamp;
        let last = events[events.len() - 1].timestamp;
        let (t_min, t_max) = match range {
            Some((lo, hi)) => {
                if lo > first || hi < last {
                    return Err(Error::InvalidConfig(format!(
                        "time range [{lo}, {hi}] does not enclose events in [{first}, {last}]"
                    )));
                }
                (lo, hi)
            }
            None => (first, last),
        };

        let mut user_histories = vec![Vec::new(); user_ids.len()];
        for (idx, e) in events.iter().enumerate() {
            user_histories[e.user as usize].push(idx as u32);
        }

        Ok(Self {
            events,
            n_users: user_ids.len(),
            n_items: item_ids.len(),
            t_min,
            t_max,
            user_histories,
            user_ids,
            item_ids,
        })
    }

    #[inline]
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.events.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    #[inline]
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    #[inline]
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    #[inline]
    pub fn t_min(&self) -> i64 {
        self.t_min
    }

    #[inline]
    pub fn t_max(&self) -> i64 {
        self.t_max
    }

    pub fn anchors(&self) -> TimeAnchors {
        TimeAnchors {
            t_min: self.t_min,
            t_max: self.t_max,
        }
    }

    /// Events of one user, in time order.
    pub fn user_history(&self, user: usize) -> impl Iterator<Item = &Event> + '_ {
        self.user_histories[user]
            .iter()
            .map(move |&idx| &self.events[idx as usize])
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_index(&self, external: &str) -> Option<usize> {
        self.user_ids.iter().position(|id| id == external)
    }

    pub fn item_index(&self, external: &str) -> Option<usize> {
        self.item_ids.iter().position(|id| id == external)
    }

    /// Events converted back to external identifiers.
    pub fn to_records(&self) -> Vec<RawEvent> {
        self.events.iter().map(|e| self.record(e)).collect()
    }

    fn record(&self, e: &Event) -> RawEvent {
        RawEvent {
            user: self.user_ids[e.user as usize].clone(),
            item: self.item_ids[e.item as usize].clone(),
            timestamp: e.timestamp,
        }
    }

    /// Distinct items each user interacted with, sorted ascending.
    pub fn user_item_sets(&self) -> Vec<Vec<u32>> {
        (0..self.n_users)
            .map(|u| {
                let mut items: Vec<u32> = self.user_history(u).map(|e| e.item).collect();
                items.sort_unstable();
                items.dedup();
                items
            })
            .collect()
    }
}

/// Reads a `user_id,item_id,timestamp` CSV with a header line.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<EventLog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", row.len()),
            });
        }
        let timestamp: i64 = row[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("timestamp {:?} is not an integer", &row[2]),
        })?;
        if row[0].is_empty() || row[1].is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty user or item id".into(),
            });
        }
        records.push(RawEvent {
            user: row[0].to_string(),
            item: row[1].to_string(),
            timestamp,
        });
    }
    EventLog::from_records(records)
}

/// Writes the log in the ingestion format.
pub fn write_csv(log: &EventLog, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["user_id", "item_id", "timestamp"])?;
    for e in log.events() {
        writer.write_record([
            log.user_ids[e.user as usize].as_str(),
            log.item_ids[e.item as usize].as_str(),
            &e.timestamp.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes the external-to-internal index tables as `kind,index,external_id`.
pub fn write_id_map(log: &EventLog, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["kind", "index", "external_id"])?;
    for (idx, id) in log.user_ids.iter().enumerate() {
        writer.write_record(["user", &idx.to_string(), id])?;
    }
    for (idx, id) in log.item_ids.iter().enumerate() {
        writer.write_record(["item", &idx.to_string(), id])?;
    }
    writer.flush()?;
    Ok(())
}

/// Drops items with fewer than `min_item` events, then users with fewer than
/// `min_user` of the remaining events. One pass each, not iterated.
pub fn filter_min_counts(log: &EventLog, min_user: usize, min_item: usize) -> Result<EventLog> {
    let mut item_counts = vec![0usize; log.n_items];
    for e in &log.events {
        item_counts[e.item as usize] += 1;
    }
    let kept: Vec<&Event> = log
        .events
        .iter()
        .filter(|e| item_counts[e.item as usize] >= min_item)
        .collect();
    let mut user_counts = vec![0usize; log.n_users];
    for e in &kept {
        user_counts[e.user as usize] += 1;
    }
    let records: Vec<RawEvent> = kept
        .into_iter()
        .filter(|e| user_counts[e.user as usize] >= min_user)
        .map(|e| log.record(e))
        .collect();
    EventLog::from_records(records)
}

/// Train log plus one held-out future event per testable user.
#[derive(Debug, Clone)]
pub struct TemporalSplit {
    pub train: EventLog,
    /// Indexed by train user; entries use train indices.
    pub heldout: Vec<Option<Event>>,
    pub cutoff: i64,
}

impl TemporalSplit {
    pub fn testable_users(&self) -> impl Iterator<Item = (usize, &Event)> + '_ {
        self.heldout
            .iter()
            .enumerate()
            .filter_map(|(u, h)| h.as_ref().map(|e| (u, e)))
    }

    pub fn n_testable(&self) -> usize {
        self.heldout.iter().filter(|h| h.is_some()).count()
    }

    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            cutoff: self.cutoff,
            t_min: self.train.t_min,
            t_max: self.train.t_max,
            train_events: self.train.len(),
            train_users: self.train.n_users,
            train_items: self.train.n_items,
            testable_users: self.n_testable(),
        }
    }
}

/// Summary of a split, written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub cutoff: i64,
    pub t_min: i64,
    pub t_max: i64,
    pub train_events: usize,
    pub train_users: usize,
    pub train_items: usize,
    pub testable_users: usize,
}

/// Events at or before `cutoff`, reindexed, with time range `[log.t_min, cutoff]`.
///
/// This is exactly the training log of [`temporal_split`], so a model trained
/// on it shares index assignments with the split.
pub fn train_prefix(log: &EventLog, cutoff: i64) -> Result<EventLog> {
    if cutoff < log.t_min {
        return Err(Error::InvalidConfig(format!(
            "cutoff {cutoff} precedes the first event at {}",
            log.t_min
        )));
    }
    let records: Vec<RawEvent> = log
        .events
        .iter()
        .filter(|e| e.timestamp <= cutoff)
        .map(|e| log.record(e))
        .collect();
    EventLog::from_records_with_range(records, log.t_min, cutoff.max(log.t_min))
}

/// Global time split: events `<= cutoff` train; each training user is tested
/// on their first event after the cutoff, unless that item never occurs in
/// training.
///
/// The train log spans `[log.t_min, cutoff]` and is reindexed densely.
pub fn temporal_split(log: &EventLog, cutoff: i64) -> Result<TemporalSplit> {
    if !(log.t_min < cutoff && cutoff < log.t_max) {
        return Err(Error::InvalidConfig(format!(
            "cutoff {cutoff} must lie strictly inside ({}, {})",
            log.t_min, log.t_max
        )));
    }
    let train = train_prefix(log, cutoff)?;

    let train_users: HashMap<&str, usize> = train
        .user_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let train_items: HashMap<&str, usize> = train
        .item_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut heldout = vec![None; train.n_users];
    let mut decided = vec![false; train.n_users];
    for e in log.events.iter().filter(|e| e.timestamp > cutoff) {
        let Some(&user) = train_users.get(log.user_ids[e.user as usize].as_str()) else {
            continue;
        };
        if decided[user] {
            continue;
        }
        decided[user] = true;
        if let Some(&item) = train_items.get(log.item_ids[e.item as usize].as_str()) {
            heldout[user] = Some(Event {
                user: user as u32,
                item: item as u32,
                timestamp: e.timestamp,
            });
        }
    }
    if heldout.iter().all(Option::is_none) {
        return Err(Error::NoTestableUsers);
    }
    Ok(TemporalSplit {
        train,
        heldout,
        cutoff,
    })
}

/// Affine anchors mapping `[t_min, t_max]` onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeAnchors {
    pub t_min: i64,
    pub t_max: i64,
}

/// A timestamp on the normalized axis; values past 1 lie in the future.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct NormalizedTime(pub f64);

impl NormalizedTime {
    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TimeAnchors {
    pub fn new(t_min: i64, t_max: i64) -> Result<Self> {
        if t_min >= t_max {
            return Err(Error::DegenerateTimeRange(t_min));
        }
        Ok(Self { t_min, t_max })
    }

    #[inline]
    pub fn span(&self) -> f64 {
        (self.t_max - self.t_min) as f64
    }

    #[inline]
    pub fn normalize(&self, timestamp: f64) -> NormalizedTime {
        NormalizedTime(2.0 * (timestamp - self.t_min as f64) / self.span() - 1.0)
    }

    #[inline]
    pub fn denormalize(&self, t: NormalizedTime) -> f64 {
        self.t_min as f64 + (t.0 + 1.0) * 0.5 * self.span()
    }

    /// Length of one day on the normalized axis.
    pub fn day_length(&self) -> f64 {
        2.0 * SECONDS_PER_DAY / self.span()
    }
}

/// Maps `timestamp` into the log's normalized time frame.
pub fn normalize_time(log: &EventLog, timestamp: i64) -> Result<NormalizedTime> {
    let anchors = TimeAnchors::new(log.t_min, log.t_max)?;
    Ok(anchors.normalize(timestamp as f64))
}

/// Per-event bin assignment for fixed-length bins starting at `t_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedLog {
    pub bins: Vec<u32>,
    pub n_bins: usize,
    pub bin_length_secs: f64,
}

impl BinnedLog {
    pub fn populations(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_bins];
        for &b in &self.bins {
            counts[b as usize] += 1;
        }
        counts
    }
}

#[inline]
pub fn bin_index(timestamp: i64, t_min: i64, bin_length_secs: f64) -> u32 {
    ((timestamp - t_min) as f64 / bin_length_secs).floor().max(0.0) as u32
}

/// Assigns every event to a fixed-length bin; empty bins are retained.
pub fn bin_events(log: &EventLog, bin_length_days: f64) -> Result<BinnedLog> {
    if !(bin_length_days > 0.0) || !bin_length_days.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "bin length must be positive, got {bin_length_days}"
        )));
    }
    let len = bin_length_days * SECONDS_PER_DAY;
    let bins = log
        .events
        .iter()
        .map(|e| bin_index(e.timestamp, log.t_min, len))
        .collect();
    Ok(BinnedLog {
        bins,
        n_bins: bin_index(log.t_max, log.t_min, len) as usize + 1,
        bin_length_secs: len,
    })
}

/// Event counts per item within `[window_start, window_end]` (inclusive).
pub fn popularity(log: &EventLog, window_start: i64, window_end: i64) -> Vec<u64> {
    let mut counts = vec![0u64; log.n_items];
    let lo = log.events.partition_point(|e| e.timestamp < window_start);
    for e in log.events[lo..]
        .iter()
        .take_while(|e| e.timestamp <= window_end)
    {
        counts[e.item as usize] += 1;
    }
    counts
}
