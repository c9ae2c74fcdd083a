//! Run configuration: a flat `key = value` file with `#` comments, overlaid
//! by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use dtf_core::adaptations::TimeStrategy;
use dtf_core::evaluation::Metric;
use dtf_core::models::{DefaultFactor, ModelKind, TrainConfig};
use dtf_core::{Error, Result};

/// One `key = value` setting and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: String,
}

/// Lower-cased key with dashes mapped to underscores.
pub fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

pub fn parse_config_text(text: &str, source: &str) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("{source}:{}: expected `key = value`", n + 1))
        })?;
        let key = normalize_key(key);
        if key.is_empty() {
            return Err(Error::InvalidConfig(format!("{source}:{}: empty key", n + 1)));
        }
        entries.push(Entry {
            key,
            value: value.trim().to_string(),
            origin: format!("{source}:{}", n + 1),
        });
    }
    Ok(entries)
}

pub fn read_config_file(path: &Path) -> Result<Vec<Entry>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text, &path.display().to_string())
}

/// Epoch seconds, an ISO date (`2024-03-01`, midnight UTC) or an RFC 3339 timestamp.
pub fn parse_cutoff(text: &str) -> Result<i64> {
    let text = text.trim();
    if let Ok(secs) = text.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(date) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Ok(date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp());
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Ok(dt.timestamp());
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S") {
        return Ok(dt.and_utc().timestamp());
    }
    Err(Error::InvalidConfig(format!(
        "cannot parse cutoff {text:?}: expected epoch seconds or an ISO date"
    )))
}

/// A sweep axis: `sweep.<key> = v1, v2, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub validation_cutoff: Option<i64>,
    pub test_cutoff: Option<i64>,
    pub model: ModelKind,
    pub train: TrainConfig,
    /// Popularity-scaling exponent; 0 disables scaling.
    pub nu: f64,
    /// Local popularity window in days.
    pub pop_window_days: f64,
    pub strategy: Option<TimeStrategy>,
    pub metrics: Vec<Metric>,
    pub exclude_seen: bool,
    pub output_dir: PathBuf,
    pub sweep: Vec<SweepAxis>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            validation_cutoff: None,
            test_cutoff: None,
            model: ModelKind::Wmf,
            train: TrainConfig::default(),
            nu: 0.0,
            pop_window_days: 7.0,
            strategy: None,
            metrics: Metric::defaults(),
            exclude_seen: true,
            output_dir: PathBuf::from("out"),
            sweep: Vec::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_default_factor(key: &str, value: &str) -> Result<DefaultFactor> {
    match value.trim() {
        "0" | "zero" => Ok(DefaultFactor::Zero),
        "1" | "one" => Ok(DefaultFactor::One),
        _ => Err(Error::InvalidConfig(format!("{key}: expected 0 or 1, got {value:?}"))),
    }
}

fn optional(value: &str) -> Option<&str> {
    let v = value.trim();
    (!v.is_empty() && v != "none").then_some(v)
}

impl RunConfig {
    /// Builds a configuration from entries applied in order (later wins).
    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut cfg = Self::default();
        for entry in entries {
            cfg.set(&entry.key, &entry.value)
                .map_err(|e| Error::InvalidConfig(format!("{} ({})", e, entry.origin)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        if let Some(axis) = key.strip_prefix("sweep.") {
            let values: Vec<String> = value
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            if values.is_empty() {
                return Err(Error::InvalidConfig(format!("sweep.{axis}: no values")));
            }
            // validate each value against a scratch copy
            let mut probe = self.clone();
            for v in &values {
                probe.set(axis, v)?;
            }
            let axis = normalize_key(axis);
            self.sweep.retain(|a| a.key != axis);
            self.sweep.push(SweepAxis { key: axis, values });
            return Ok(());
        }
        let t = &mut self.train;
        match key.as_str() {
            "dataset" | "data" => self.dataset = optional(value).map(PathBuf::from),
            "validation_cutoff" => self.validation_cutoff = optional(value).map(parse_cutoff).transpose()?,
            "test_cutoff" => self.test_cutoff = optional(value).map(parse_cutoff).transpose()?,
            "model" => self.model = value.parse()?,
            "k" => t.k = parse_num(&key, value)?,
            "r" => t.r = parse_num(&key, value)?,
            "alpha" => t.alpha = parse_num(&key, value)?,
            "lambda" => t.lambda = parse_num(&key, value)?,
            "lambda_a" => t.lambda_a = parse_num(&key, value)?,
            "sigma" => t.sigma = parse_num(&key, value)?,
            "bin_days" | "bin_length" => t.bin_days = parse_num(&key, value)?,
            "iterations" => t.iterations = parse_num(&key, value)?,
            "seed" => t.seed = parse_num(&key, value)?,
            "threads" => t.threads = parse_num(&key, value)?,
            "half_life" | "half_life_days" => {
                t.half_life_days = optional(value).map(|v| parse_num(&key, v)).transpose()?
            }
            "window_days" | "trending_window" => t.window_days = parse_num(&key, value)?,
            "kernel_samples" => t.kernel_samples = parse_num(&key, value)?,
            "cg_tol" => t.cg_tol = parse_num(&key, value)?,
            "cg_max_iter" => t.cg_max_iter = parse_num(&key, value)?,
            "ease_max_items" => t.ease_max_items = parse_num(&key, value)?,
            "dmf_budget_bytes" => t.dmf_budget_bytes = parse_num(&key, value)?,
            "default_factor_users" => t.default_factor.users = parse_default_factor(&key, value)?,
            "default_factor_items" => t.default_factor.items = parse_default_factor(&key, value)?,
            "default_factor_time" => t.default_factor.time = parse_default_factor(&key, value)?,
            "nu" => self.nu = parse_num(&key, value)?,
            "pop_window" | "pop_window_days" => self.pop_window_days = parse_num(&key, value)?,
            "strategy" => {
                self.strategy = match optional(value) {
                    None | Some("as-trained") => None,
                    Some(s) => Some(s.parse()?),
                }
            }
            "metrics" => {
                self.metrics = value
                    .split(',')
                    .filter(|m| !m.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?;
                if self.metrics.is_empty() {
                    return Err(Error::InvalidConfig("metrics: empty list".into()));
                }
            }
            "exclude_seen" => self.exclude_seen = parse_bool(&key, value)?,
            "output_dir" | "out_dir" => self.output_dir = PathBuf::from(value.trim()),
            other => return Err(Error::InvalidConfig(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let (Some(v), Some(t)) = (self.validation_cutoff, self.test_cutoff) {
            if v >= t {
                return Err(Error::InvalidConfig(format!(
                    "validation cutoff {v} must precede test cutoff {t}"
                )));
            }
        }
        if self.nu.is_nan() || self.nu < 0.0 {
            return Err(Error::InvalidConfig(format!("nu must be >= 0, got {}", self.nu)));
        }
        if self.pop_window_days.is_nan() || self.pop_window_days <= 0.0 {
            return Err(Error::InvalidConfig("pop_window must be > 0".into()));
        }
        Ok(())
    }

    /// Checks the cutoffs against the dataset's time range.
    pub fn check_cutoffs(&self, t_min: i64, t_max: i64) -> Result<()> {
        for (name, cutoff) in [("validation", self.validation_cutoff), ("test", self.test_cutoff)] {
            if let Some(c) = cutoff {
                if !(t_min < c && c < t_max) {
                    return Err(Error::InvalidConfig(format!(
                        "{name} cutoff {c} must lie strictly inside the data range ({t_min}, {t_max})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("no dataset given (set `dataset` or --data)".into()))
    }

    /// Settings that affect training, as a stable cache key.
    pub fn training_key(&self) -> String {
        format!(
            "{}|{}",
            self.model,
            serde_json::to_string(&self.train).expect("config serializes")
        )
    }
}
