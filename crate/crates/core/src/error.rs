use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("corpus contains no records")]
    EmptyCorpus,

    #[error("{bad} of {total} rows are malformed (limit {limit_pct}%)")]
    MalformedRowLimitExceeded {
        bad: usize,
        total: usize,
        limit_pct: f64,
    },

    #[error("split of {sequences} sequences at ratio {ratio} leaves one side empty")]
    DegenerateSplit { sequences: usize, ratio: f64 },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("difficulty {0} outside [0, 1]")]
    OutOfRange(f64),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("clustering labeled every point as noise")]
    AllNoise,

    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("malformed model response: {0}")]
    MalformedResponse(String),

    #[error("only {succeeded} of {total} bank entries were annotated successfully")]
    BankBuildFailed { succeeded: usize, total: usize },

    #[error("fusion received no candidates")]
    EmptyCandidatePool,

    #[error("memory bank is empty")]
    EmptyBank,

    #[error("AUC undefined: labels contain a single class")]
    SingleClass,

    #[error("length mismatch: {0} labels vs {1} scores")]
    LengthMismatch(usize, usize),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Provider,
}

impl Error {
    pub fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::ProviderUnavailable(_) | Error::MalformedResponse(_) => ErrorClass::Provider,
            _ => ErrorClass::Data,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "MissingColumn",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::MalformedRowLimitExceeded { .. } => "MalformedRowLimitExceeded",
            Error::DegenerateSplit { .. } => "DegenerateSplit",
            Error::Invalid { .. } => "Invalid",
            Error::OutOfRange(_) => "OutOfRange",
            Error::TooFewPoints { .. } => "TooFewPoints",
            Error::AllNoise => "AllNoise",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::ProviderUnavailable(_) => "ProviderUnavailable",
            Error::MalformedResponse(_) => "MalformedResponse",
            Error::BankBuildFailed { .. } => "BankBuildFailed",
            Error::EmptyCandidatePool => "EmptyCandidatePool",
            Error::EmptyBank => "EmptyBank",
            Error::SingleClass => "SingleClass",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::Config(_) => "Config",
            Error::Io { .. } => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }
}
