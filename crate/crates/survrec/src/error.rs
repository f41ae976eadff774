//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A data row could not be parsed. `line` is 1-based and counts the
    /// header, matching what an editor shows.
    #[error("load error at line {line}: {message}")]
    Load { line: u64, message: String },

    #[error("dataset eliminated by filter: no interactions survive the cold-start thresholds")]
    DatasetEliminatedByFilter,

    #[error("split error for user `{user}`: {reason}")]
    Split { user: String, reason: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("unknown course `{0}`")]
    UnknownCourse(String),

    #[error("shape mismatch: expected {expected} columns, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("no events in fold")]
    NoEvents,

    #[error("no comparable pairs for concordance index")]
    NoComparablePairs,

    #[error("dataset has no survival targets (prediction-only rows)")]
    MissingTargets,

    #[error("ranked lists cover different candidate sets")]
    CandidateSetMismatch,

    #[error("no recommendations for test user `{0}`")]
    MissingUser(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("model file is not a {expected} model (found {found})")]
    ModelKindMismatch { expected: String, found: String },

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
