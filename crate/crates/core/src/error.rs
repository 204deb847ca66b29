use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("malformed value in {file} at row {row}, column {col}: {message}")]
    Parse {
        file: String,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("non-finite value in {file} at row {row}, column {col}")]
    NonFinite { file: String, row: usize, col: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label {label} at row {row} out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: i64,
        classes: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("factorization failed after diagonal jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("penalized Gram matrix is not positive definite for alpha = {alpha}")]
    IndefiniteGram { alpha: f64 },

    #[error("perturbation mass outside box ({eps_box}) exceeds failure budget ({phi})")]
    BudgetExceeded { phi: f64, eps_box: f64 },

    #[error("zero normalizer between class {label} and competitor {competitor}")]
    ZeroNormalizer { label: usize, competitor: usize },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Short machine-readable tag used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingFile(_) => "missing_file",
            Error::Parse { .. } => "parse",
            Error::NonFinite { .. } => "non_finite",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Factorization { .. } => "factorization",
            Error::IndefiniteGram { .. } => "indefinite_gram",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::ZeroNormalizer { .. } => "zero_normalizer",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::Json(_) => "json",
        }
    }
}
