use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error in `{op}`: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("proposal error at x = {x:?}: {detail}")]
    Proposal { x: Vec<f64>, detail: String },

    #[error("kernel error: {0}")]
    Kernel(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("fit failure: {0}")]
    Fit(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
