use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate retraction: |x + v| = {norm:e}")]
    DegenerateRetraction { norm: f64 },

    #[error("unknown scenario `{name}`; available: {}", available.join(", "))]
    UnknownScenario { name: String, available: Vec<String> },

    #[error("cannot parse kernel spec `{spec}`: {reason}")]
    KernelSpec { spec: String, reason: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
