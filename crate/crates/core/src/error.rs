use std::path::PathBuf;

use thiserror::Error;

/// A CSV row that failed validation, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
    /// Geo id named on the row, when it had one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo_id: Option<String>,
}

impl RejectedRow {
    pub fn new(line: u64, reason: impl Into<String>, geo_id: Option<&str>) -> Self {
        Self {
            line,
            reason: reason.into(),
            geo_id: geo_id.filter(|g| !g.is_empty()).map(str::to_string),
        }
    }
}

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
    #[error("{path}: header mismatch, expected `{expected}`")]
    Header { path: PathBuf, expected: String },
    #[error("{0}: no usable rows")]
    EmptyInput(PathBuf),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-positive weight {weight} at index {index}")]
    NonPositiveWeight { index: usize, weight: f64 },
    #[error("degenerate mobility input: {0}")]
    DegenerateMobility(String),
    #[error("time {0} is negative")]
    NegativeTime(f64),
    #[error("infeasible seed: susceptible pool would be {susceptible}")]
    InfeasibleSeed { susceptible: f64 },
    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),
    #[error("all {starts} starts failed: {diagnostics:?}")]
    FitFailed { starts: usize, diagnostics: Vec<String> },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid scenario: {field}: {reason}")]
    InvalidScenario { field: &'static str, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
