use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = RafdaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RafdaError {
    #[error("integration diverged at step {step}")]
    IntegrationDiverged { step: usize },

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("series of length {len} is too short for m = {m}, tau = {tau}")]
    SeriesTooShort { len: usize, m: usize, tau: usize },

    #[error("series is constant; its entropy is zero")]
    ZeroEntropy,

    #[error("no delay found: mutual information curve has no local minimum and never drops below 1/e of its lag-1 value")]
    NoDelayFound,

    #[error("no embedding dimension up to {m_max} has a false-neighbour fraction below {threshold} (fractions: {fractions:?})")]
    DimensionNotFound {
        m_max: usize,
        threshold: f64,
        fractions: Vec<(usize, f64)>,
    },

    #[error("not enough points: {0}")]
    NotEnoughPoints(String),

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("{0}")]
    FilterDiverged(Box<crate::enkf::Divergence>),

    #[error("non-finite values after the {0} step")]
    NonFinite(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl RafdaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RafdaError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad usage or configuration rather than the
    /// numerics of the data.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            RafdaError::Config(_)
                | RafdaError::InvalidArgument(_)
                | RafdaError::Io { .. }
                | RafdaError::Json(_)
                | RafdaError::Csv(_)
                | RafdaError::Format { .. }
        )
    }
}
