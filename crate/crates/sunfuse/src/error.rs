//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by dataset handling, model fitting, and prediction.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("duplicate observation for site {site}, day {day}, source {source_name}")]
    DuplicateKey {
        site: String,
        day: u32,
        source_name: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: need {required}, got {actual} ({context})")]
    InsufficientData {
        required: usize,
        actual: usize,
        context: String,
    },

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("numerical conditioning failure: {0}")]
    Conditioning(String),

    #[error("fit failed on all starts: {0}")]
    FitFailure(String),

    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),

    #[error("point ({lat}, {lon}) outside grid cell with origin ({lat0}, {lon0})")]
    OutOfCell {
        lat: f64,
        lon: f64,
        lat0: f64,
        lon0: f64,
    },

    #[error("local prediction failed for query {index}: {msg}")]
    LocalQuery { index: usize, msg: String },

    #[error("unknown comparator: {0}")]
    UnknownComparator(String),

    #[error("comparator `{0}` requires true simulator values, which are unavailable at off-station query points")]
    TrueSimUnavailable(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
