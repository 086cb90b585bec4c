use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{role} column '{column}' not found")]
    MissingColumn { role: &'static str, column: String },

    #[error("row {row}: cannot parse {column} value '{value}'")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("dataset file {0} has no data rows")]
    EmptyDataset(PathBuf),

    #[error("month {0} is referenced by the split but absent from the dataset")]
    MonthOutOfRange(u32),

    #[error("split roles '{first}' and '{second}' share month {month}")]
    SplitOverlap {
        first: &'static str,
        second: &'static str,
        month: u32,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("false-positive rate undefined: {0}")]
    UndefinedFpr(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("calibration of expert '{expert}' failed: {reason}")]
    Calibration { expert: String, reason: String },

    #[error("infeasible scenario: {0}")]
    Infeasible(String),

    #[error("data integrity: {0}")]
    Integrity(String),

    #[error("unknown expert '{0}'")]
    UnknownExpert(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stale artifact {path}: {reason}")]
    Stale { path: PathBuf, reason: String },

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Validation failures map to exit code 1; everything else is a runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
