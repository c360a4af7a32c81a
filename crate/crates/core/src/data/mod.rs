//! Behavior-log ingestion: sequence construction, negatives, splits and the
//! sample file format.

mod event;
mod ingest;
mod negative;
mod sample_file;
mod split;
pub mod synth;
mod vocab;

pub use event::{read_events, read_events_file, write_events, BehaviorEvent};
pub use ingest::{build_samples, ingest, IngestOptions, IngestReport, Ingested, Source};
pub use negative::negative_sample;
pub use sample_file::{read_sample_file, read_samples, write_sample_file, write_samples};
pub use split::{split, SplitPolicy};
pub use vocab::Vocabulary;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::model::ItemKey;

/// One labeled training instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub user: String,
    /// Time-ordered behaviors preceding the target, oldest first.
    pub history: Vec<ItemKey>,
    pub target: ItemKey,
    /// 1 for a click, 0 otherwise.
    pub label: u8,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("no samples survived filtering ({skipped} malformed rows, {dropped} users dropped)")]
    Empty { skipped: usize, dropped: usize },
    #[error("no eligible negative item for user {user:?}: history covers the item vocabulary")]
    VocabularyExhausted { user: String },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("sample file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("identifier {0:?} cannot be written (contains a tab or newline)")]
    UnwritableId(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}
