use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the evaluation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("shape mismatch in {what}: expected {expected} bytes, found {actual}")]
    ShapeMismatch {
        what: String,
        expected: u64,
        actual: u64,
    },

    #[error("non-finite logit in {} at flat index {index}", path.display())]
    NonFiniteLogit { path: PathBuf, index: usize },

    #[error("label {label} at index {index} in {} is out of range for {num_classes} classes", path.display())]
    LabelOutOfRange {
        path: PathBuf,
        index: usize,
        label: u32,
        num_classes: usize,
    },

    #[error("exit_costs must be strictly increasing: exit_costs[{index}] = {value} does not exceed the previous cost")]
    NonIncreasingCosts { index: usize, value: f64 },

    #[error("invalid manifest field `{field}`: {reason}")]
    InvalidManifest { field: String, reason: String },

    #[error("I/O failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("split `{0}` is not present in the dataset")]
    MissingSplit(String),

    #[error("split `{0}` has no samples")]
    EmptySplit(String),

    #[error("non-finite input value")]
    NonFiniteInput,

    #[error("value {value} lies outside the domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("labels are all positive or all negative; the score is undefined")]
    DegenerateLabels,

    #[error("exit-share parameter q must be positive and finite, got {0}")]
    NonPositiveQ(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid transform chain: {0}")]
    InvalidChain(String),

    #[error("malformed report input {}: {reason}", path.display())]
    Report { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, flags, configs)
    /// rather than by a failure during computation.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::NonFiniteInput
                | Error::Domain { .. }
                | Error::LengthMismatch { .. }
                | Error::EmptyInput
                | Error::DegenerateLabels
        )
    }
}
