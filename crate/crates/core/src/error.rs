use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no valid baseline: {0}")]
    NoValidBaseline(String),
    #[error("too few entries: need at least {needed}, got {got}")]
    TooFewEntries { needed: usize, got: usize },
    #[error(transparent)]
    Dataset(#[from] crate::tasks::DatasetError),
    #[error(transparent)]
    Checkpoint(#[from] crate::metatrain::CheckpointError),
    #[error("record parse error: {0}")]
    Record(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
