use crate::dataset::{bin_events, EventLog, TimeAnchors};
use crate::error::{Error, Result};

use super::{event_weights, TrainConfig};

/// One weighted training event on the normalized time axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainEvent {
    pub user: u32,
    pub item: u32,
    pub t: f64,
    pub bin: u32,
    pub weight: f64,
}

/// Training view of an event log: weighted events plus per-user, per-item
/// and per-bin indices into them.
#[derive(Debug, Clone)]
pub struct Interactions {
    pub n_users: usize,
    pub n_items: usize,
    pub n_bins: usize,
    pub bin_length_secs: f64,
    pub anchors: TimeAnchors,
    pub events: Vec<TrainEvent>,
    pub by_user: Vec<Vec<u32>>,
    pub by_item: Vec<Vec<u32>>,
    pub by_bin: Vec<Vec<u32>>,
}

impl Interactions {
    /// Builds the training view. Bins use `cfg.bin_days`; a degenerate time
    /// range maps every event to `t = 0`.
    pub fn new(log: &EventLog, cfg: &TrainConfig) -> Result<Self> {
        if log.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let weights = event_weights(log, cfg.alpha, cfg.half_life_days);
        let binned = bin_events(log, cfg.bin_days)?;
        let anchors = log.anchors();
        let degenerate = anchors.t_min == anchors.t_max;
        let events: Vec<TrainEvent> = log
            .events()
            .iter()
            .zip(&weights)
            .zip(&binned.bins)
            .map(|((e, &weight), &bin)| TrainEvent {
                user: e.user,
                item: e.item,
                t: if degenerate {
                    0.0
                } else {
                    anchors.normalize(e.timestamp as f64).value()
                },
                bin,
                weight,
            })
            .collect();
        Ok(Self::assemble(
            log.n_users(),
            log.n_items(),
            binned.n_bins,
            binned.bin_length_secs,
            anchors,
            events,
        ))
    }

    /// Builds the view from explicit events (used by toy instances in tests).
    pub fn from_events(
        n_users: usize,
        n_items: usize,
        n_bins: usize,
        anchors: TimeAnchors,
        events: Vec<TrainEvent>,
    ) -> Self {
        let bin_length_secs = anchors.span().max(1.0) / n_bins as f64;
        Self::assemble(n_users, n_items, n_bins, bin_length_secs, anchors, events)
    }

    fn assemble(
        n_users: usize,
        n_items: usize,
        n_bins: usize,
        bin_length_secs: f64,
        anchors: TimeAnchors,
        events: Vec<TrainEvent>,
    ) -> Self {
        let mut by_user = vec![Vec::new(); n_users];
        let mut by_item = vec![Vec::new(); n_items];
        let mut by_bin = vec![Vec::new(); n_bins];
        for (idx, e) in events.iter().enumerate() {
            by_user[e.user as usize].push(idx as u32);
            by_item[e.item as usize].push(idx as u32);
            by_bin[e.bin as usize].push(idx as u32);
        }
        Self {
            n_users,
            n_items,
            n_bins,
            bin_length_secs,
            anchors,
            events,
            by_user,
            by_item,
            by_bin,
        }
    }

    pub fn require_time_range(&self) -> Result<TimeAnchors> {
        TimeAnchors::new(self.anchors.t_min, self.anchors.t_max)
    }

    #[inline]
    pub fn user_events(&self, user: usize) -> impl Iterator<Item = &TrainEvent> + '_ {
        self.by_user[user].iter().map(move |&i| &self.events[i as usize])
    }

    #[inline]
    pub fn item_events(&self, item: usize) -> impl Iterator<Item = &TrainEvent> + '_ {
        self.by_item[item].iter().map(move |&i| &self.events[i as usize])
    }

    #[inline]
    pub fn bin_events(&self, bin: usize) -> impl Iterator<Item = &TrainEvent> + '_ {
        self.by_bin[bin].iter().map(move |&i| &self.events[i as usize])
    }
}
