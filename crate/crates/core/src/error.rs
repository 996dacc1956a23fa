//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by dataset construction, model fitting, and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("outcome {value} outside declared bounds [{lo}, {hi}]")]
    OutcomeOutOfBounds { value: f64, lo: f64, hi: f64 },

    #[error("invalid weights: {0}")]
    Weight(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("shift intervention requires a fitted reference density")]
    UnfittedReference,

    #[error("unsupported exposure value: {0}")]
    UnsupportedValue(String),

    #[error("degenerate exposure support: {0}")]
    DegenerateSupport(String),

    #[error("empty risk set at bin {0}")]
    EmptyRiskSet(usize),

    #[error("regression diverged (separation): {0}")]
    Separation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("all clever-covariate weights are zero")]
    AllWeightsZero,

    #[error("contrast inputs come from different runs: {0}")]
    MismatchedRuns(String),

    #[error("invalid simulation spec: {0}")]
    Spec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
