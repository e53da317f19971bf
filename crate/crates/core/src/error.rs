use std::path::PathBuf;

use crate::corpus::DatasetTag;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown emotion label {label:?} for dataset {dataset}")]
    UnknownEmotion { label: String, dataset: DatasetTag },

    #[error("unknown emotion labels for dataset {dataset}: {}", labels.join(", "))]
    UnknownEmotions {
        labels: Vec<String>,
        dataset: DatasetTag,
    },

    #[error("label {label} is not legal for dataset {dataset}")]
    IllegalLabel { label: String, dataset: DatasetTag },

    #[error("label {0} is not part of the configured label space")]
    LabelOutOfSpace(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid dialogue {id}: {reason}")]
    InvalidDialogue { id: String, reason: String },

    #[error("{path}:{line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

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

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} target {index} out of range for {classes} classes")]
    TargetOutOfRange {
        what: &'static str,
        index: usize,
        classes: usize,
    },

    #[error("non-finite values in {tensor} at step {step}")]
    NonFinite { tensor: String, step: u64 },

    #[error("unknown ablation {0:?}")]
    UnknownAblation(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("item {item} has {found} ratings, expected {expected}")]
    UnequalRaters {
        item: usize,
        expected: usize,
        found: usize,
    },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

impl Error {
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
