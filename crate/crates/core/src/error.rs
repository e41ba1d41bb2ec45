use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("duplicate passage id {0:?}")]
    DuplicateId(String),
    #[error("query {0:?} has no answers")]
    EmptyAnswers(String),
    #[error("BM25 index has not been built for this store")]
    IndexNotBuilt,
    #[error("{path}: bad store file: {reason}")]
    BadStore { path: PathBuf, reason: String },

    #[error("no vector for query {0:?}")]
    MissingQueryVector(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{path}: bad embedding file: {reason}")]
    BadEmbeddingFile { path: PathBuf, reason: String },
    #[error("ranked lists belong to different queries ({0:?} vs {1:?})")]
    MixedQueryIds(String, String),

    #[error("gold_id labeling needs a gold passage id on query {0:?}")]
    MissingGoldId(String),
    #[error("retrievers cover different query sets ({0:?} differs from {1:?})")]
    QuerySetMismatch(String, String),

    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("passage {0:?} is not in the corpus")]
    UnresolvedPassage(String),
    #[error("token budget {budget} cannot hold the top passage ({needed} tokens needed)")]
    BudgetTooSmall { budget: usize, needed: usize },

    #[error("gold passage {passage:?} does not contain an answer to {query:?}")]
    GoldNotRelevant { query: String, passage: String },
    #[error("no gold passage found for query {0:?}")]
    NoGold(String),
    #[error("found {found} negatives, needed {needed}")]
    InsufficientNegatives { found: usize, needed: usize },

    #[error("query pool for source {0} exhausted")]
    PoolExhausted(String),
    #[error("no ranked list from {retriever:?} for query {query:?}")]
    MissingRankedList { retriever: String, query: String },
    #[error("{path}:{line}: malformed external line: {reason}")]
    MalformedExternalLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("reasoning labeler unavailable: {0}")]
    LabelerUnavailable(String),
    #[error("labeler returned empty reasoning for query {0:?}")]
    EmptyReasoning(String),

    #[error("endpoint returned status {status}: {body}")]
    EndpointError { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("mock misconfigured: {0}")]
    MockMisconfigured(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no transcript entry for key {0}")]
    MissingTranscriptEntry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the contents of an input file rather than
    /// by how the program was invoked.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidConfig(_) | Error::Io { .. })
    }
}
