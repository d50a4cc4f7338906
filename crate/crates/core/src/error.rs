//! Crate-wide error type and its mapping onto process exit codes.

use std::path::PathBuf;

/// Every failure the engine can surface, one variant per failure class.
///
/// The CLI maps errors onto three exit-code buckets via [`Error::exit_code`]:
/// configuration problems (1), backend problems (2), and data problems (3).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid run configuration (bad flag value, inconsistent fields,
    /// unusable config file).
    #[error("config error: {0}")]
    Config(String),

    /// A backend spec named a kind that does not exist.
    #[error("unknown backend kind: {0:?} (expected mock, trace, or remote)")]
    UnknownBackend(String),

    /// A mock profile violated its own invariants.
    #[error("invalid mock profile: {0}")]
    InvalidProfile(String),

    /// Text could not be tokenized by the backend's vocabulary.
    #[error("tokenization error: {0}")]
    Tokenization(String),

    /// The context grew past the backend's maximum length.
    #[error("context of {length} tokens exceeds backend maximum {max}")]
    ContextOverflow { length: usize, max: usize },

    /// The remote backend could not be reached or answered with an
    /// HTTP-level failure. Safe to retry: requests are pure reads.
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    /// The remote backend answered, but the payload violated the wire
    /// protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A scripted trace file failed validation.
    #[error("trace format error at line {line}: {message}")]
    TraceFormat { line: usize, message: String },

    /// A dataset file failed validation.
    #[error("dataset error at line {line}: {message}")]
    Dataset { line: usize, message: String },

    /// Records handed to an aggregation were inconsistent
    /// (duplicate question ids, mixed budgets, empty input).
    #[error("input error: {0}")]
    Input(String),

    /// Numeric computation received non-finite input.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A threshold sweep was requested on a non-deterministic backend.
    #[error("sweep unsupported: {0}")]
    SweepUnsupported(String),

    /// Plot-data emission found an upstream report missing.
    #[error("plot data error: missing upstream file {missing}")]
    PlotData { missing: String },

    /// Filesystem failure, with the path that was being touched.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wrap an io error with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 1 config, 2 backend, 3 data.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_)
            | Error::UnknownBackend(_)
            | Error::InvalidProfile(_)
            | Error::SweepUnsupported(_) => 1,
            Error::BackendUnavailable(_)
            | Error::Protocol(_)
            | Error::ContextOverflow { .. } => 2,
            Error::Tokenization(_)
            | Error::TraceFormat { .. }
            | Error::Dataset { .. }
            | Error::Input(_)
            | Error::Numerical(_)
            | Error::PlotData { .. }
            | Error::Io { .. } => 3,
        }
    }
}
