use thiserror::Error;

/// Errors raised anywhere in the training and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("conjugate gradient diverged: residual grew from {initial:e} to {current:e}")]
    Diverged { initial: f64, current: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("kernel width must be positive, got {0}")]
    InvalidKernelWidth(f64),

    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no testable users after the cutoff")]
    NoTestableUsers,

    #[error("degenerate time range: t_min == t_max == {0}")]
    DegenerateTimeRange(i64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("item count {n} exceeds the dense-solve cap of {cap}")]
    ItemCountTooLarge { n: usize, cap: usize },

    #[error("model needs {needed} bytes, budget is {budget}")]
    MemoryBudgetExceeded { needed: usize, budget: usize },

    #[error("index out of range: {what} {index} >= {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("strategy unsupported: {0}")]
    StrategyUnsupported(String),

    #[error("checkpoint/cutoff mismatch: {0}")]
    CutoffMismatch(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse grouping used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Solver,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::NotPositiveDefinite { .. } | Error::Diverged { .. } => ErrorCategory::Solver,
            Error::DimensionMismatch(_) => ErrorCategory::Solver,
            Error::InvalidKernelWidth(_)
            | Error::InvalidConfig(_)
            | Error::ItemCountTooLarge { .. }
            | Error::MemoryBudgetExceeded { .. }
            | Error::StrategyUnsupported(_)
            | Error::CutoffMismatch(_) => ErrorCategory::Config,
            Error::Parse { .. }
            | Error::EmptyDataset
            | Error::NoTestableUsers
            | Error::DegenerateTimeRange(_)
            | Error::IndexOutOfRange { .. }
            | Error::Checkpoint(_)
            | Error::Csv(_)
            | Error::Io(_) => ErrorCategory::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
