mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dtf_core::{Error, ErrorCategory};

#[derive(Debug, Parser)]
#[command(name = "dtf", version, about = "Time-aware implicit-feedback recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by the commands that read a run configuration. Each flag
/// overrides the matching key of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Event CSV (`user_id,item_id,timestamp`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub r: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long = "lambda-a")]
    pub lambda_a: Option<String>,
    #[arg(long)]
    pub sigma: Option<String>,
    #[arg(long = "bin-days")]
    pub bin_days: Option<String>,
    #[arg(long)]
    pub iterations: Option<String>,
    #[arg(long)]
    pub nu: Option<String>,
    #[arg(long = "half-life")]
    pub half_life: Option<String>,
    /// last | last-n | last-<n> | drop-time | extrapolate
    #[arg(long)]
    pub strategy: Option<String>,
    /// Explicit cutoff (epoch seconds or ISO date); overrides --split.
    #[arg(long)]
    pub cutoff: Option<String>,
    /// Which configured cutoff to use: validation | test | full.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub threads: Option<String>,
    #[arg(long = "output-dir")]
    pub output_dir: Option<PathBuf>,
    /// Any other config key, as `key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read a raw event CSV, optionally filter it, and write the canonical log.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[arg(long = "min-user-events", default_value_t = 1)]
        min_user_events: usize,
        #[arg(long = "min-item-events", default_value_t = 1)]
        min_item_events: usize,
    },
    /// Split a log at a cutoff and write the train log, held-out events and a manifest.
    Split(RunArgs),
    /// Train a model on the events up to the selected cutoff.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint path (default: <output-dir>/<model>.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the split at the selected cutoff.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Include per-user results in the JSON report.
        #[arg(long = "per-user")]
        per_user: bool,
        /// Row label in the CSV report (default: <model>/<strategy>).
        #[arg(long)]
        label: Option<String>,
    },
    /// Grid search on the validation split, then retrain the winner for the test split.
    Sweep(RunArgs),
    /// Generate a synthetic log with planted popularity curves.
    Synth {
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        /// bumps | swap
        #[arg(long, default_value = "bumps")]
        scenario: String,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 20)]
        items: usize,
        #[arg(long, default_value_t = 4)]
        clusters: usize,
        #[arg(long, default_value_t = 10_000)]
        events: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Write score-versus-time curves of one user for some items.
    ExportCurves {
        #[arg(long)]
        checkpoint: PathBuf,
        /// External user id.
        #[arg(long)]
        user: String,
        /// Comma-separated external item ids.
        #[arg(long, value_delimiter = ',')]
        items: Vec<String>,
        /// Number of evenly spaced points on the normalized time axis.
        #[arg(long = "grid", default_value_t = 101)]
        grid_points: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Solver => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest {
            input,
            out_dir,
            min_user_events,
            min_item_events,
        } => commands::ingest(&input, &out_dir, min_user_events, min_item_events),
        Command::Split(run) => commands::split(&run),
        Command::Train { run, out } => commands::train(&run, out.as_deref()),
        Command::Evaluate {
            run,
            checkpoint,
            per_user,
            label,
        } => commands::evaluate(&run, &checkpoint, per_user, label.as_deref()),
        Command::Sweep(run) => commands::sweep(&run),
        Command::Synth {
            out_dir,
            scenario,
            users,
            items,
            clusters,
            events,
            seed,
        } => commands::synth(&out_dir, &scenario, users, items, clusters, events, seed),
        Command::ExportCurves {
            checkpoint,
            user,
            items,
            grid_points,
            out,
        } => commands::export_curves(&checkpoint, &user, &items, grid_points, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
