//! Error type shared across the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate ticker: {0}")]
    DuplicateTicker(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("empty panel: {0}")]
    EmptyPanel(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("unsupported window {0}; expected one of 5, 10, 21, 42 trading days")]
    BadWindow(usize),
    #[error("degenerate series: {0}")]
    DegenerateSeries(String),
    #[error("unknown ticker: {0}")]
    MissingTicker(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("empty sequence: {0}")]
    EmptySequence(String),
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("divergence detected: {0}")]
    DivergenceDetected(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("prediction grids misaligned: {0}")]
    AlignmentError(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::SchemaViolation(e.to_string())
    }
}

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed or missing input data.
    Data,
    /// Numerically degenerate or diverging computation.
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            DuplicateTicker(_) | SchemaViolation(_) | EmptyPanel(_) | InsufficientHistory(_)
            | BadWindow(_) | MissingTicker(_) | EmptyInput(_) | AlignmentError(_)
            | InvalidArgument(_) | CheckpointFormat(_) | Io(_) => ErrorClass::Data,
            DegenerateSeries(_) | ShapeError(_) | TapeConsumed | EmptySequence(_)
            | DegenerateSplit(_) | DivergenceDetected(_) | DegenerateSample(_) => {
                ErrorClass::Numeric
            }
        }
    }
}
