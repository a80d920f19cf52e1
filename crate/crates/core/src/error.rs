use std::io;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("gene {gene} has a missing or non-numeric value in sample {sample}")]
    MissingValue { gene: String, sample: String },
    #[error("gene id {0} appears more than once")]
    DuplicateGene(String),
    #[error("at least 4 samples are required, found {0}")]
    TooFewSamples(usize),
    #[error("at least 2 genes are required, found {0}")]
    TooFewGenes(usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("gene at index {0} has zero variance")]
    ZeroVariance(usize),
    #[error("log-likelihood became non-finite at iteration {0}")]
    NonFinite(usize),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("FDR level {0} cannot be reached by any pair of cutoffs")]
    Unattainable(f64),
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("positive-definite repair did not converge")]
    RepairFailed,
    #[error("graphs are over different node sets ({0} vs {1} nodes)")]
    NodeSetMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse grouping used by front ends to pick an exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    InvalidInput,
    Numeric,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFinite(_)
            | Error::Unattainable(_)
            | Error::NotPositiveDefinite
            | Error::RepairFailed => ErrorKind::Numeric,
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::InvalidInput,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
