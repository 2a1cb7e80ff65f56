//! Reading markets and observed distributions, writing reports.

pub mod distribution;
pub mod market;
pub mod report;
pub mod tables;

use thiserror::Error;

pub use distribution::{parse_distribution, parse_distribution_str, ObservedDistribution};
pub use market::{parse_market, parse_market_str, GainsMode, MarketFile};
pub use report::ReportFile;
pub use tables::parse_tables;

/// Problems with user-supplied files. All map to exit code 1 on the CLI.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum InputError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("line {line}, column {column}: unknown gains mode `{tag}` (expected `pi` or `Pi`)")]
    UnknownMode { line: usize, column: usize, tag: String },

    #[error("{0}")]
    Dimension(String),

    #[error("gains entry in row {}, column {} is {value}; gains must be finite and non-negative", row + 1, col + 1)]
    NegativeGains { row: usize, col: usize, value: f64 },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{path}: {message}")]
    Csv { path: String, message: String },

    #[error("malformed report: {0}")]
    Report(String),

    #[error(transparent)]
    Model(#[from] crate::error::Error),
}
