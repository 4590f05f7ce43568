use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("path error: {path}: {msg}")]
    Path { path: PathBuf, msg: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("decode error: {path}: {msg}")]
    Decode { path: String, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("unsupported checkpoint format version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error(
        "non-finite loss at step {step} (l_main={l_main}, l_dist={l_dist}); batch entries: {}",
        entries.join(", ")
    )]
    NonFiniteLoss {
        step: usize,
        l_main: f64,
        l_dist: f64,
        entries: Vec<String>,
    },

    #[error("batch error: entry {entry}: {source}")]
    Batch {
        entry: String,
        #[source]
        source: Box<Error>,
    },

    #[error("nothing to report: no run records in {0}")]
    NothingToReport(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
