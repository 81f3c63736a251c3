use thiserror::Error;

/// Errors raised by the core library.
///
/// Variants fall into three families that the command-line front end maps to
/// distinct exit codes: malformed input files, violated invariants and
/// numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid skeleton topology: {0}")]
    InvalidTopology(String),

    #[error("degenerate skeleton: {0}")]
    DegenerateSkeleton(String),

    #[error("invalid motion: {0}")]
    InvalidMotion(String),

    #[error("entity has no points")]
    EmptyEntity,

    #[error("volume spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("invalid volume spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid diffusion schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid timestep: {0}")]
    InvalidTimestep(String),

    #[error("not enough samples: {0}")]
    InsufficientSamples(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format { format, reason: reason.into() }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) | Error::Format { .. } => ErrorKind::Format,
            Error::NonFinite(_) => ErrorKind::Numerical,
            _ => ErrorKind::Invariant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Format,
    Invariant,
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
