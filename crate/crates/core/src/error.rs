//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Every failure this crate reports.
///
/// Dataset problems ([`Error::DatasetFile`], [`Error::DatasetParse`]) always
/// name the offending file (and line where one exists); configuration
/// problems ([`Error::Config`]) always name the offending key. Callers that
/// map errors to process exit codes rely on this split.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not line up for the attempted operation.
    #[error("{op}: dimension mismatch: {details}")]
    DimMismatch { op: &'static str, details: String },

    /// An adjacency matrix carried a negative edge weight.
    #[error("invalid adjacency: negative edge weight {value} at ({row}, {col})")]
    NegativeEdgeWeight { row: usize, col: usize, value: f64 },

    /// An adjacency matrix carried a diagonal (self-loop) entry.
    #[error("invalid adjacency: self-loop at node {node}")]
    SelfLoop { node: usize },

    /// Sparse-matrix construction was handed malformed or asymmetric entries.
    #[error("invalid sparse matrix: {0}")]
    InvalidSparse(String),

    /// The eigensolver was handed a non-symmetric matrix.
    #[error("eigensolver requires a symmetric matrix: |m[{row},{col}] - m[{col},{row}]| = {diff:.3e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    /// Jacobi sweeps failed to drive the off-diagonal norm to tolerance.
    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off:.3e})")]
    EigenNoConverge { sweeps: usize, off: f64 },

    /// A configuration value is unknown, out of range, or inconsistent.
    #[error("config error: key `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// A dataset file is missing or unreadable.
    #[error("dataset error: {}: {reason}", path.display())]
    DatasetFile { path: PathBuf, reason: String },

    /// A dataset file has a malformed line (line numbers are 1-based).
    #[error("dataset error: {}:{line}: {reason}", path.display())]
    DatasetParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    /// The number of supplied relations does not match the fusion method.
    #[error("fusion `{fusion}` expects {expected} relation(s), got {got}")]
    RelationCount {
        fusion: String,
        expected: String,
        got: usize,
    },

    /// A graph segment was empty where at least one node is required.
    #[error("empty graph segment {segment}")]
    EmptySegment { segment: usize },

    /// A gradient turned non-finite during an optimizer step.
    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGrad { param: String },

    /// A checkpoint file could not be written, read, or matched to the model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// I/O failure while writing reports or other outputs.
    #[error("io error: {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
