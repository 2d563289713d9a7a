use std::path::PathBuf;

use sgan_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("layer {index} ({kind}): {source}")]
    Layer {
        index: usize,
        kind: &'static str,
        #[source]
        source: TensorError,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("identifier collision: {0}")]
    Collision(String),

    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),

    #[error("checkpoint checksum mismatch (corrupt or truncated file)")]
    Checksum,

    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error("warm start: no tensor of the donor matches the target")]
    NoMatch,

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e}, trace {trace:e})")]
    NotPsd { eigenvalue: f64, trace: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite loss at step {step}{}", last_checkpoint.as_ref().map(|p| format!(" (last checkpoint {})", p.display())).unwrap_or_default())]
    NonFinite {
        step: u64,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("non-finite pixels generated: {0}")]
    NonFiniteOutput(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
