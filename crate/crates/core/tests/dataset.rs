mod common;

use std::collections::{BTreeSet, HashMap};

use common::raw;
use dtf_core::dataset::{
    bin_events, filter_min_counts, ingest_csv, normalize_time, popularity, temporal_split, write_csv, EventLog,
    RawEvent,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DAY: i64 = 86_400;

fn random_records(seed: u64, users: usize, items: usize, events: usize, span: i64) -> Vec<RawEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..events)
        .map(|_| {
            // skewed item choice so that count filters bite
            let item = (rng.random::<f64>().powi(2) * items as f64) as usize;
            raw(
                &format!("u{}", rng.random_range(0..users)),
                &format!("i{item}"),
                1_600_000_000 + rng.random_range(0..span),
            )
        })
        .collect()
}

/// External-id triples of a log, for comparisons that ignore reindexing.
fn triples(log: &EventLog) -> BTreeSet<(String, String, i64)> {
    log.to_records()
        .into_iter()
        .map(|r| (r.user, r.item, r.timestamp))
        .collect()
}

#[test]
fn filter_matches_two_pass_oracle() {
    let records = random_records(7, 60, 40, 800, 30 * DAY);
    let log = EventLog::from_records(records).unwrap();
    let filtered = filter_min_counts(&log, 3, 10).unwrap();

    let all = triples(&log);
    let mut item_count: HashMap<&str, usize> = HashMap::new();
    for (_, i, _) in &all {
        *item_count.entry(i).or_default() += 1;
    }
    let after_items: Vec<_> = all.iter().filter(|(_, i, _)| item_count[i.as_str()] >= 10).collect();
    let mut user_count: HashMap<&str, usize> = HashMap::new();
    for (u, _, _) in &after_items {
        *user_count.entry(u).or_default() += 1;
    }
    let expected: BTreeSet<_> = after_items
        .into_iter()
        .filter(|(u, _, _)| user_count[u.as_str()] >= 3)
        .cloned()
        .collect();
    assert!(!expected.is_empty());
    assert_eq!(triples(&filtered), expected);
}

#[test]
fn filter_no_op_when_everyone_qualifies() {
    let log = EventLog::from_records(vec![raw("a", "x", 1), raw("a", "y", 2), raw("b", "x", 3), raw("b", "y", 4)])
        .unwrap();
    let filtered = filter_min_counts(&log, 2, 2).unwrap();
    assert_eq!(triples(&filtered), triples(&log));
}

#[test]
fn filter_can_empty_the_log() {
    let log = EventLog::from_records(vec![raw("a", "x", 1), raw("a", "y", 2)]).unwrap();
    assert!(filter_min_counts(&log, 3, 1).is_err());
}

#[test]
fn weekly_bin_populations_match_naive_loop() {
    let log = EventLog::from_records(random_records(3, 20, 15, 500, 60 * DAY)).unwrap();
    let binned = bin_events(&log, 7.0).unwrap();
    let mut naive = vec![0usize; binned.n_bins];
    for e in log.events() {
        naive[((e.timestamp - log.t_min()) / (7 * DAY)) as usize] += 1;
    }
    assert_eq!(binned.populations(), naive);
    assert_eq!(binned.n_bins as i64, (log.t_max() - log.t_min()) / (7 * DAY) + 1);
}

#[test]
fn single_day_gives_one_bin() {
    let log = EventLog::from_records(vec![raw("a", "x", 100), raw("b", "x", 5000)]).unwrap();
    let binned = bin_events(&log, 1.0).unwrap();
    assert_eq!(binned.n_bins, 1);
    assert_eq!(binned.bins, vec![0, 0]);
}

#[test]
fn popularity_matches_brute_force() {
    let log = EventLog::from_records(random_records(9, 30, 12, 400, 20 * DAY)).unwrap();
    let (lo, hi) = (log.t_min(), (log.t_min() + log.t_max()) / 2);
    let counts = popularity(&log, lo, hi);
    let mut naive = vec![0u64; log.n_items()];
    for e in log.events() {
        if e.timestamp >= lo && e.timestamp <= hi {
            naive[e.item as usize] += 1;
        }
    }
    assert_eq!(counts, naive);

    let full = popularity(&log, log.t_min(), log.t_max());
    assert_eq!(full.iter().sum::<u64>() as usize, log.len());
}

#[test]
fn empty_popularity_window() {
    let log = EventLog::from_records(vec![raw("a", "x", 10), raw("b", "y", 30)]).unwrap();
    assert_eq!(popularity(&log, 20, 20), vec![0, 0]);
}

#[test]
fn normalization_examples() {
    let log = EventLog::from_records(vec![raw("a", "x", 1000), raw("a", "y", 3000)]).unwrap();
    assert_eq!(normalize_time(&log, 1000).unwrap().value(), -1.0);
    assert_eq!(normalize_time(&log, 2000).unwrap().value(), 0.0);
    // half a span past t_max is one full unit past +1
    assert_eq!(normalize_time(&log, 4000).unwrap().value(), 2.0);
    assert_eq!(normalize_time(&log, 3500).unwrap().value(), 1.5);
    let flat = EventLog::from_records(vec![raw("a", "x", 5)]).unwrap();
    assert!(normalize_time(&flat, 5).is_err());
}

#[test]
fn csv_round_trip_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let log = EventLog::from_records(random_records(1, 10, 8, 100, 5 * DAY)).unwrap();
    let path = dir.path().join("events.csv");
    write_csv(&log, &path).unwrap();
    let again = ingest_csv(&path).unwrap();
    assert_eq!(again, log);
}

#[test]
fn non_numeric_timestamp_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "user_id,item_id,timestamp\na,x,1\nb,y,2\nc,z,3\nd,w,later\n").unwrap();
    match ingest_csv(&path) {
        Err(dtf_core::Error::Parse { line, .. }) => assert_eq!(line, 5),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn split_partitions_the_log(seed in 0u64..200, cut in 0.2f64..0.8) {
        let log = EventLog::from_records(random_records(seed, 15, 10, 200, 10 * DAY)).unwrap();
        let cutoff = log.t_min() + ((log.t_max() - log.t_min()) as f64 * cut) as i64;
        let Ok(split) = temporal_split(&log, cutoff) else { return Ok(()); };
        prop_assert!(split.train.events().iter().all(|e| e.timestamp <= cutoff));
        let later = log.events().iter().filter(|e| e.timestamp > cutoff).count();
        prop_assert_eq!(split.train.len() + later, log.len());
        for (user, e) in split.testable_users() {
            prop_assert!(e.timestamp > cutoff);
            prop_assert!(split.train.user_history(user).next().is_some());
        }
    }

    #[test]
    fn normalization_is_affine(a in 0i64..1_000_000, b in 0i64..1_000_000) {
        let log = EventLog::from_records(vec![raw("u", "i", 0), raw("u", "j", 1_000_000)]).unwrap();
        let na = normalize_time(&log, a).unwrap().value();
        let nb = normalize_time(&log, b).unwrap().value();
        let mid = log.anchors().normalize((a + b) as f64 / 2.0).value();
        prop_assert!((na + nb - 2.0 * mid).abs() < 1e-12);
        if a < b {
            prop_assert!(na < nb);
        }
    }

    #[test]
    fn bins_cover_their_events(seed in 0u64..200, days in 0.5f64..10.0) {
        let log = EventLog::from_records(random_records(seed, 5, 5, 60, 30 * DAY)).unwrap();
        let binned = bin_events(&log, days).unwrap();
        let len = days * DAY as f64;
        for (e, &b) in log.events().iter().zip(&binned.bins) {
            prop_assert!((b as usize) < binned.n_bins);
            let start = log.t_min() as f64 + b as f64 * len;
            prop_assert!(e.timestamp as f64 - start < len + 1e-6);
            prop_assert!(e.timestamp as f64 >= start - 1e-6);
        }
    }

    #[test]
    fn histories_hold_every_event(seed in 0u64..200) {
        let log = EventLog::from_records(random_records(seed, 8, 6, 80, 3 * DAY)).unwrap();
        let total: usize = (0..log.n_users()).map(|u| log.user_history(u).count()).sum();
        prop_assert_eq!(total, log.len());
        prop_assert!(log.events().iter().all(|e| e.timestamp >= log.t_min() && e.timestamp <= log.t_max()));
        prop_assert!(log.events().windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    }
}
