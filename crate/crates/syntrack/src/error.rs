use thiserror::Error;

/// Error taxonomy shared by the whole crate. Variant names mirror the
/// stable kebab-case codes reported by the CLI (`invalid-argument`,
/// `dead-prefix`, ...) so scripted callers can match on them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid-argument: {0}")]
    InvalidArgument(String),

    #[error("not-found: {0}")]
    NotFound(String),

    #[error("derivation-overflow: {0}")]
    DerivationOverflow(String),

    #[error("closure-divergence: {0}")]
    ClosureDivergence(String),

    #[error("dead-prefix: {0}")]
    DeadPrefix(String),

    #[error("degenerate-geometry: {0}")]
    DegenerateGeometry(String),

    #[error("filter-divergence: {0}")]
    FilterDivergence(String),

    #[error("perturbation-failure: {0}")]
    PerturbationFailure(String),

    #[error("degenerate-metric: {0}")]
    DegenerateMetric(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("format: {0}")]
    Format(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
