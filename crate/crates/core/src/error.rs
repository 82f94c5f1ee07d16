use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GiscError>;

#[derive(Debug, Error)]
pub enum GiscError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("index {index} out of range 1..={max}")]
    Index { index: usize, max: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("non-finite value at iteration {iteration}: {what}")]
    Numerical { iteration: usize, what: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("unknown builtin scene `{0}`")]
    Lookup(String),

    #[error("unpaired runs: {}", .0.join(", "))]
    Pairing(Vec<String>),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
}

impl GiscError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GiscError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        GiscError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
