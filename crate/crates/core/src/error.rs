use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("query {0} has no complete observation")]
    RowUnbootstrapped(usize),

    #[error("entry ({0}, {1}) is already complete")]
    AlreadyComplete(usize, usize),

    #[error("timeout must be finite and positive, got {0}")]
    NonPositiveTimeout(f64),

    #[error("entry ({query}, {hint}) is censored at {bound}; re-observation needs a larger timeout than {timeout}")]
    TimeoutNotIncreased {
        query: usize,
        hint: usize,
        bound: f64,
        timeout: f64,
    },

    #[error("latency must be finite and positive, got {0}")]
    InvalidLatency(f64),

    #[error("index ({query}, {hint}) out of bounds for a {rows}x{cols} matrix")]
    OutOfBounds {
        query: usize,
        hint: usize,
        rows: usize,
        cols: usize,
    },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("degenerate configuration: {0}")]
    DegenerateConfig(String),

    #[error("least-squares system is numerically singular")]
    SingularSystem,

    #[error("no complete observation to fit against")]
    NoObservations,

    #[error("spectrum is empty")]
    EmptySpectrum,

    #[error("nothing left to explore")]
    NothingToExplore,

    #[error("query {0} has a non-positive predicted minimum")]
    ZeroPrediction(usize),

    #[error("{path}:{line}:{column}: {reason}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: usize,
        reason: String,
    },

    #[error("{path}:{line}: expected {expected} cells, found {found}")]
    Shape {
        path: PathBuf,
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("{path}:{line}:{column}: latency must be positive, got {value}")]
    Value {
        path: PathBuf,
        line: u64,
        column: usize,
        value: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
