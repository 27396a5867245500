use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("checksum mismatch: header says {expected:#010x}, records hash to {actual:#010x}")]
    Checksum { expected: u32, actual: u32 },

    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("epsilon {0} outside [0, 1]")]
    Domain(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}): loss is {loss}")]
    Divergence { epoch: usize, learning_rate: f64, loss: f64 },

    #[error("provider error: {0}")]
    Provider(String),

    #[error("protocol error: {message}: {line:?}")]
    Protocol { message: String, line: String },

    #[error("{dataset_id}: {source}")]
    Dataset {
        dataset_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("ROC undefined: {0}")]
    UndefinedRoc(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format { offset, message: message.into() }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File { path: path.into(), source }
    }

    pub fn in_dataset(self, dataset_id: &str) -> Self {
        Error::Dataset { dataset_id: dataset_id.to_string(), source: Box::new(self) }
    }
}
