use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("constraint error: {0}")]
    Constraint(String),
    #[error("vocab error: {0}")]
    Vocab(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("compatibility error: {0}")]
    Compatibility(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for input/validation problems,
    /// 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_)
            | Error::Constraint(_)
            | Error::Vocab(_)
            | Error::Geometry(_)
            | Error::Pairing(_)
            | Error::Dataset(_)
            | Error::Checkpoint(_)
            | Error::Config(_)
            | Error::Compatibility(_) => 1,
            Error::Numeric(_) | Error::Sampling(_) | Error::Training(_) | Error::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
