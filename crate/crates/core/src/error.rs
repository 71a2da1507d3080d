use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("format error in {path} line {line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("validation failed for {subject}: {msg}")]
    Validation { subject: String, msg: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("decode error for {path}: {msg}")]
    Decode { path: PathBuf, msg: String },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("modality error: expected {expected}, got {got} for record {id}")]
    Modality {
        id: String,
        expected: String,
        got: String,
    },
    #[error("non-finite value in {component}")]
    NonFinite { component: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(subject: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            subject: subject.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
