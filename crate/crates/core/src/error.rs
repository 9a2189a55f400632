use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("no projects with target role")]
    NoProjectsWithRole,

    #[error("empty sample")]
    EmptySample,

    #[error("parameter vector has length {got}, model expects {want}")]
    DimensionMismatch { got: usize, want: usize },

    #[error("non-finite parameter at index {0}")]
    NonFiniteParam(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown project `{0}`")]
    UnknownProject(String),

    #[error("all warmup proposals diverged in chain {0}")]
    AllProposalsDiverged(usize),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("{0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;
