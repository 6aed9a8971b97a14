use thiserror::Error;

/// Errors surfaced by the mechanisms, the harness, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    /// A contract between two components was broken (e.g. a tree without
    /// variance metadata handed to the dissimilarity estimator).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The w-event budget constraint would be exceeded. This must be
    /// unreachable; a run that hits it is aborted.
    #[error(
        "ledger violation at t={t}: window [{window_start}, {t}] spends {spent} > cap {cap} (nano-epsilon)"
    )]
    LedgerViolation {
        t: u64,
        window_start: u64,
        spent: u64,
        cap: u64,
    },

    #[error("query error: missing releases for timestamps {missing:?}")]
    MissingReleases { missing: Vec<u64> },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
