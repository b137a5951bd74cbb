use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not an {format} file")]
    BadMagic { format: &'static str },

    #[error("{format} version mismatch: found {found}, expected {expected}")]
    VersionMismatch {
        format: &'static str,
        found: u8,
        expected: u8,
    },

    #[error("truncated {format} payload: expected {expected} bytes, found {found}")]
    Truncated {
        format: &'static str,
        expected: u64,
        found: u64,
    },

    #[error("malformed {format} file: {reason}")]
    Malformed { format: &'static str, reason: String },

    #[error("empty feature set")]
    EmptyFeatureSet,

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stiff integration: step size {step:e} underflowed at t = {t}")]
    StiffIntegration { t: f64, step: f64 },

    #[error("integration exceeded {max_steps} steps at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },

    #[error("non-finite ODE state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("training diverged: validation loss is {value} at epoch {epoch}")]
    Diverged { epoch: usize, value: f64 },

    #[error("need ≥2 classes (found {0})")]
    NeedTwoClasses(usize),

    #[error("rank correlation undefined: {0} is constant")]
    RankUndefined(&'static str),

    #[error("missing scores for encoder {encoder:?} fork {fork}")]
    MissingKey { encoder: String, fork: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// `true` for failures of the underlying filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
