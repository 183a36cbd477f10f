use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("duplicate entry for ({date}, {ticker}) at row {row}")]
    DuplicateEntry {
        row: usize,
        date: String,
        ticker: String,
    },

    #[error("non-positive price {price} at row {row}")]
    NonPositivePrice { row: usize, price: f64 },

    #[error("price panel is empty after cleaning")]
    EmptyPanel,

    #[error("need at least {needed} rows, have {available}")]
    InsufficientRows { needed: usize, available: usize },

    #[error("benchmark ticker {0:?} not found in panel")]
    MissingBenchmark(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("column {0} of the design matrix is identically zero")]
    ZeroColumn(usize),

    #[error("non-finite value encountered in coordinate descent at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("selected design is singular (reciprocal condition estimate {rcond:.3e})")]
    SingularDesign { rcond: f64 },

    #[error("saturated model: T = {samples} observations with {selected} selected predictors")]
    Saturated { samples: usize, selected: usize },

    #[error("truncation mass underflows: mu = {mu}, sigma = {sigma}, bounds = [{lower}, {upper}]")]
    DegenerateTruncation {
        mu: f64,
        sigma: f64,
        lower: f64,
        upper: f64,
    },

    #[error("statistic {stat} lies outside truncation interval [{lower}, {upper}]")]
    OutsideTruncation { stat: f64, lower: f64, upper: f64 },

    #[error("bracketing failed while inverting the confidence interval: {0}")]
    Bracketing(String),

    #[error("no selections in any of {0} replications")]
    NoSelections(usize),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// CLI exit code: 2 for i/o and config failures, 1 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Csv(_)
            | Error::MalformedRow { .. }
            | Error::DuplicateEntry { .. }
            | Error::NonPositivePrice { .. }
            | Error::EmptyPanel
            | Error::MissingBenchmark(_)
            | Error::Config(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
