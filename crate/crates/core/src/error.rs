use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("node index {index} out of range for {n_nodes} nodes")]
    NodeOutOfRange { index: usize, n_nodes: usize },

    #[error("node {0} has more than one label")]
    DuplicateLabel(usize),

    #[error("node {0} has no label")]
    MissingLabel(usize),

    #[error("label {label} of node {node} is not below n_classes = {n_classes}")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        n_classes: usize,
    },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("infeasible generator settings: {0}")]
    Infeasible(String),

    #[error("empty index mask")]
    EmptyMask,

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("finite difference unresolved: {0}")]
    Unresolved(String),

    #[error("gradient tape: {0}")]
    Tape(String),

    #[error("split {split}: {source}")]
    Split {
        split: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
