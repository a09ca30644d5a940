use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// The smallest singular value (or eigenvalue) fell at or below the cutoff.
    #[error("singular system: smallest singular value {smallest:e} not above cutoff {cutoff:e} (gap {gap:e})")]
    Singular {
        smallest: f64,
        cutoff: f64,
        gap: f64,
    },

    #[error("under-parametrized: {features} features for {samples} samples")]
    UnderParametrized { features: usize, samples: usize },

    #[error("eigenvalue floor {target:e} not reached after {attempts} draws (best {best:e})")]
    ConcentrationFailure {
        best: f64,
        target: f64,
        attempts: usize,
    },

    #[error("label {value} at index {index} exceeds unit magnitude")]
    LabelOutOfRange { index: usize, value: f64 },

    #[error("trial panicked: {0}")]
    TrialPanic(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn singular(smallest: f64, cutoff: f64) -> Self {
        Error::Singular {
            smallest,
            cutoff,
            gap: cutoff - smallest,
        }
    }
}
