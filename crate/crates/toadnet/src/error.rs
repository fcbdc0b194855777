use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training error: {0}")]
    Train(String),
}

/// Process exit code for CLI failures: bad inputs exit 2, broken or
/// inconsistent artifacts (checkpoints, aborted runs) exit 3.
impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Image { .. }
            | Error::Config(_)
            | Error::Dataset(_)
            | Error::Shape(_) => 2,
            Error::Checkpoint(_) | Error::Train(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image { path: path.into(), source }
    }
}
