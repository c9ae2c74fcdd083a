use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use dtf_core::adaptations::{Adaptations, PopularityScaler};
use dtf_core::dataset::{
    filter_min_counts, ingest_csv, temporal_split, train_prefix, write_csv, write_id_map, EventLog,
    NormalizedTime, TemporalSplit,
};
use dtf_core::evaluation::{evaluate as evaluate_split, write_reports_csv, EvalOptions, EvalReport, Metric, MetricKind};
use dtf_core::models::{self, load_checkpoint, save_checkpoint, FactorModel};
use dtf_core::synth::{generate, SynthSpec};
use dtf_core::{Error, Result};

use crate::config::{read_config_file, Entry, RunConfig};
use crate::RunArgs;

const SWEEP_TARGET: Metric = Metric::new(MetricKind::Ndcg, 50);

/// Config file entries followed by flag overrides.
pub fn load_run_config(run: &RunArgs) -> Result<RunConfig> {
    let mut entries = match &run.config {
        Some(path) => read_config_file(path)?,
        None => Vec::new(),
    };
    let flag = |key: &str, value: &str| Entry {
        key: key.to_string(),
        value: value.to_string(),
        origin: format!("--{}", key.replace('_', "-")),
    };
    if let Some(path) = &run.data {
        entries.push(flag("dataset", &path.display().to_string()));
    }
    if let Some(path) = &run.output_dir {
        entries.push(flag("output_dir", &path.display().to_string()));
    }
    let flags = [
        ("model", &run.model),
        ("k", &run.k),
        ("r", &run.r),
        ("alpha", &run.alpha),
        ("lambda", &run.lambda),
        ("lambda_a", &run.lambda_a),
        ("sigma", &run.sigma),
        ("bin_days", &run.bin_days),
        ("iterations", &run.iterations),
        ("nu", &run.nu),
        ("half_life", &run.half_life),
        ("strategy", &run.strategy),
        ("seed", &run.seed),
        ("threads", &run.threads),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            entries.push(flag(key, v));
        }
    }
    for pair in &run.set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects key=value, got {pair:?}")))?;
        entries.push(Entry {
            key: crate::config::normalize_key(key),
            value: value.trim().to_string(),
            origin: "--set".into(),
        });
    }
    RunConfig::from_entries(&entries)
}

/// Cutoff chosen by `--cutoff` or `--split`; `None` means the full log.
/// Axis assignments, the resolved config and its validation report.
type SweepRow = (Vec<(String, String)>, RunConfig, EvalReport);

fn select_cutoff(cfg: &RunConfig, run: &RunArgs) -> Result<Option<i64>> {
    if let Some(text) = &run.cutoff {
        return crate::config::parse_cutoff(text).map(Some);
    }
    let missing = |name: &str| Error::InvalidConfig(format!("--split {name} but no {name}_cutoff configured"));
    match run.split.as_deref().map(str::to_ascii_lowercase).as_deref() {
        Some("validation") => cfg.validation_cutoff.map(Some).ok_or_else(|| missing("validation")),
        Some("test") => cfg.test_cutoff.map(Some).ok_or_else(|| missing("test")),
        Some("full") => Ok(None),
        Some(other) => Err(Error::InvalidConfig(format!(
            "unknown split {other:?}, expected validation, test or full"
        ))),
        None => Ok(cfg.validation_cutoff),
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<EventLog> {
    let log = ingest_csv(cfg.dataset()?)?;
    cfg.check_cutoffs(log.t_min(), log.t_max())?;
    Ok(log)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn ingest(input: &Path, out_dir: &Path, min_user: usize, min_item: usize) -> Result<()> {
    let raw = ingest_csv(input)?;
    let log = filter_min_counts(&raw, min_user, min_item)?;
    ensure_dir(out_dir)?;
    write_csv(&log, out_dir.join("events.csv"))?;
    write_id_map(&log, out_dir.join("id_map.csv"))?;
    println!(
        "{} events, {} users, {} items, time range [{}, {}]",
        log.len(),
        log.n_users(),
        log.n_items(),
        log.t_min(),
        log.t_max()
    );
    Ok(())
}

pub fn split(run: &RunArgs) -> Result<()> {
    let cfg = load_run_config(run)?;
    let log = load_dataset(&cfg)?;
    let cutoff = select_cutoff(&cfg, run)?
        .ok_or_else(|| Error::InvalidConfig("split needs a cutoff".into()))?;
    let split = temporal_split(&log, cutoff)?;
    ensure_dir(&cfg.output_dir)?;
    write_csv(&split.train, cfg.output_dir.join("train.csv"))?;
    let mut writer = csv::Writer::from_path(cfg.output_dir.join("heldout.csv")).map_err(Error::from)?;
    writer.write_record(["user_id", "item_id", "timestamp"]).map_err(Error::from)?;
    for (user, e) in split.testable_users() {
        writer
            .write_record([
                split.train.user_ids()[user].as_str(),
                split.train.item_ids()[e.item as usize].as_str(),
                &e.timestamp.to_string(),
            ])
            .map_err(Error::from)?;
    }
    writer.flush()?;
    let manifest = split.manifest();
    write_json(&manifest, &cfg.output_dir.join("manifest.json"))?;
    println!(
        "cutoff {}: {} training events, {} testable users",
        cutoff, manifest.train_events, manifest.testable_users
    );
    Ok(())
}

fn train_on(log: &EventLog, cutoff: Option<i64>, cfg: &RunConfig) -> Result<FactorModel> {
    let train_log = match cutoff {
        Some(c) => train_prefix(log, c)?,
        None => log.clone(),
    };
    let start = Instant::now();
    let model = models::train(cfg.model, &train_log, &cfg.train)?;
    log::info!(
        "trained {} on {} events in {:.2}s",
        cfg.model,
        train_log.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(model)
}

pub fn train(run: &RunArgs, out: Option<&Path>) -> Result<()> {
    let cfg = load_run_config(run)?;
    let log = load_dataset(&cfg)?;
    let cutoff = select_cutoff(&cfg, run)?;
    let model = train_on(&log, cutoff, &cfg)?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            ensure_dir(&cfg.output_dir)?;
            cfg.output_dir.join(format!("{}.json", cfg.model))
        }
    };
    save_checkpoint(&model, &path)?;
    println!("checkpoint written to {}", path.display());
    Ok(())
}

/// Rejects checkpoints whose training range does not end exactly at the
/// evaluation cutoff or whose index maps differ from the split.
pub fn check_checkpoint(model: &FactorModel, split: &TemporalSplit) -> Result<()> {
    let trained_until = model.anchors.t_max;
    if trained_until > split.cutoff {
        return Err(Error::CutoffMismatch(format!(
            "checkpoint was trained on data up to {trained_until}, past the evaluation cutoff {}",
            split.cutoff
        )));
    }
    if trained_until != split.cutoff || model.anchors.t_min != split.train.t_min() {
        return Err(Error::CutoffMismatch(format!(
            "checkpoint covers [{}, {trained_until}], the split trains on [{}, {}]",
            model.anchors.t_min,
            split.train.t_min(),
            split.cutoff
        )));
    }
    if model.user_ids != split.train.user_ids() || model.item_ids != split.train.item_ids() {
        return Err(Error::CutoffMismatch(
            "checkpoint index maps differ from the split's training log".into(),
        ));
    }
    Ok(())
}

fn adaptations_for(cfg: &RunConfig, split: &TemporalSplit) -> Result<Adaptations> {
    let scaler = if cfg.nu > 0.0 {
        Some(PopularityScaler::from_log(&split.train, cfg.nu, cfg.pop_window_days)?)
    } else {
        None
    };
    Ok(Adaptations {
        strategy: cfg.strategy,
        scaler,
    })
}

fn eval_options(cfg: &RunConfig) -> EvalOptions {
    EvalOptions {
        metrics: cfg.metrics.clone(),
        exclude_seen: cfg.exclude_seen,
    }
}

fn label_for(cfg: &RunConfig) -> String {
    let strategy = cfg.strategy.map_or("as-trained".to_string(), |s| s.to_string());
    format!("{}/{}/nu={}", cfg.model, strategy, cfg.nu)
}

pub fn evaluate(run: &RunArgs, checkpoint: &Path, per_user: bool, label: Option<&str>) -> Result<()> {
    let cfg = load_run_config(run)?;
    let log = load_dataset(&cfg)?;
    let cutoff = select_cutoff(&cfg, run)?
        .ok_or_else(|| Error::InvalidConfig("evaluation needs a cutoff".into()))?;
    let split = temporal_split(&log, cutoff)?;
    let model = load_checkpoint(checkpoint)?;
    check_checkpoint(&model, &split)?;
    let mut run_cfg = cfg.clone();
    run_cfg.model = model.kind;
    let report = evaluate_split(&model, &adaptations_for(&cfg, &split)?, &split, &eval_options(&cfg))?;
    ensure_dir(&cfg.output_dir)?;
    let label = label.map_or_else(|| label_for(&run_cfg), str::to_string);
    write_reports_csv(&[(label, &report)], cfg.output_dir.join("evaluation.csv"))?;
    fs::write(cfg.output_dir.join("evaluation.json"), report.to_json(per_user)?)?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &EvalReport) {
    for s in &report.summary {
        println!("{:<10} {:.4} ± {:.4}", s.metric, s.mean, s.ci_halfwidth);
    }
    println!("users      {}", report.n_users);
}

/// Cartesian product of the sweep axes, first axis varying slowest.
fn grid_points(cfg: &RunConfig) -> Vec<Vec<(String, String)>> {
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in &cfg.sweep {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut next = p.clone();
                    next.push((axis.key.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }
    points
}

pub fn sweep(run: &RunArgs) -> Result<()> {
    let mut cfg = load_run_config(run)?;
    if cfg.sweep.is_empty() {
        return Err(Error::InvalidConfig("no sweep.<key> grids configured".into()));
    }
    let (val_cutoff, test_cutoff) = match (cfg.validation_cutoff, cfg.test_cutoff) {
        (Some(v), Some(t)) => (v, t),
        _ => {
            return Err(Error::InvalidConfig(
                "sweep needs both validation_cutoff and test_cutoff".into(),
            ))
        }
    };
    if !cfg.metrics.contains(&SWEEP_TARGET) {
        cfg.metrics.insert(0, SWEEP_TARGET);
    }
    let log = load_dataset(&cfg)?;
    let val_split = temporal_split(&log, val_cutoff)?;
    let test_split = temporal_split(&log, test_cutoff)?;

    let points = grid_points(&cfg);
    let mut cache: HashMap<String, FactorModel> = HashMap::new();
    let mut rows: Vec<SweepRow> = Vec::new();
    for point in points {
        let mut point_cfg = cfg.clone();
        for (key, value) in &point {
            point_cfg.set(key, value)?;
        }
        point_cfg.validate()?;
        let key = point_cfg.training_key();
        if !cache.contains_key(&key) {
            let model = train_on(&log, Some(val_cutoff), &point_cfg)?;
            cache.insert(key.clone(), model);
        }
        let model = &cache[&key];
        let report = evaluate_split(
            model,
            &adaptations_for(&point_cfg, &val_split)?,
            &val_split,
            &eval_options(&point_cfg),
        )?;
        log::info!(
            "{}: ndcg@50 = {:.4}",
            describe(&point),
            report.mean(SWEEP_TARGET).unwrap_or(f64::NAN)
        );
        rows.push((point, point_cfg, report));
    }

    let target = |r: &EvalReport| r.mean(SWEEP_TARGET).unwrap_or(f64::NEG_INFINITY);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| target(&rows[b].2).total_cmp(&target(&rows[a].2)).then(a.cmp(&b)));

    ensure_dir(&cfg.output_dir)?;
    write_leaderboard(&cfg, &rows, &order, &cfg.output_dir.join("leaderboard.csv"))?;

    let (best_point, best_cfg, _) = &rows[order[0]];
    let model = train_on(&log, Some(test_cutoff), best_cfg)?;
    let report = evaluate_split(
        &model,
        &adaptations_for(best_cfg, &test_split)?,
        &test_split,
        &eval_options(best_cfg),
    )?;
    let label = format!("{} [{}]", label_for(best_cfg), describe(best_point));
    write_reports_csv(&[(label, &report)], cfg.output_dir.join("sweep_test.csv"))?;
    fs::write(cfg.output_dir.join("sweep_test.json"), report.to_json(false)?)?;
    println!("best: {}", describe(best_point));
    print_summary(&report);
    Ok(())
}

fn describe(point: &[(String, String)]) -> String {
    point
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_leaderboard(
    cfg: &RunConfig,
    rows: &[SweepRow],
    order: &[usize],
    path: &Path,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
    let mut header = vec!["rank".to_string()];
    header.extend(cfg.sweep.iter().map(|a| a.key.clone()));
    for m in &cfg.metrics {
        header.push(m.to_string());
        header.push(format!("{m}_ci"));
    }
    writer.write_record(&header).map_err(Error::from)?;
    for (rank, &idx) in order.iter().enumerate() {
        let (point, _, report) = &rows[idx];
        let mut record = vec![(rank + 1).to_string()];
        record.extend(point.iter().map(|(_, v)| v.clone()));
        for s in &report.summary {
            record.push(s.mean.to_string());
            record.push(s.ci_halfwidth.to_string());
        }
        writer.write_record(&record).map_err(Error::from)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn synth(
    out_dir: &Path,
    scenario: &str,
    users: usize,
    items: usize,
    clusters: usize,
    events: usize,
    seed: u64,
) -> Result<()> {
    let spec = match scenario {
        "bumps" => SynthSpec::random_bumps(users, items, clusters, events, seed),
        "swap" => SynthSpec::popularity_swap(users, items, events, seed),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown scenario {other:?}, expected bumps or swap"
            )))
        }
    };
    let out = generate(&spec)?;
    ensure_dir(out_dir)?;
    write_csv(&out.log, out_dir.join("events.csv"))?;
    out.truth.write(out_dir.join("truth.json"))?;
    println!(
        "{} events, {} users, {} items written to {}",
        out.log.len(),
        out.log.n_users(),
        out.log.n_items(),
        out_dir.display()
    );
    Ok(())
}

pub fn export_curves(
    checkpoint: &Path,
    user: &str,
    items: &[String],
    grid_points: usize,
    out: &Path,
) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    if !model.kind.has_time() {
        return Err(Error::StrategyUnsupported(format!(
            "{} has no time dimension to export",
            model.kind
        )));
    }
    if grid_points < 2 {
        return Err(Error::InvalidConfig("--grid needs at least 2 points".into()));
    }
    let lookup = |ids: &[String], id: &str, what: &str| {
        ids.iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown {what} {id:?}")))
    };
    let u = lookup(&model.user_ids, user, "user")?;
    let item_idx: Vec<usize> = items
        .iter()
        .map(|id| lookup(&model.item_ids, id, "item"))
        .collect::<Result<_>>()?;
    if item_idx.is_empty() {
        return Err(Error::InvalidConfig("no items requested".into()));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let mut writer = csv::Writer::from_path(out).map_err(Error::from)?;
    let mut header = vec!["t".to_string(), "timestamp".to_string()];
    header.extend(items.iter().cloned());
    writer.write_record(&header).map_err(Error::from)?;
    for j in 0..grid_points {
        let t = -1.0 + 2.0 * j as f64 / (grid_points - 1) as f64;
        let ts = model.anchors.denormalize(NormalizedTime(t));
        let mut record = vec![t.to_string(), format!("{}", ts.round() as i64)];
        for &i in &item_idx {
            record.push(model.score(u, i, NormalizedTime(t))?.to_string());
        }
        writer.write_record(&record).map_err(Error::from)?;
    }
    writer.flush()?;
    println!("{} curves x {grid_points} points written to {}", item_idx.len(), out.display());
    Ok(())
}
