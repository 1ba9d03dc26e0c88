use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated payload in {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("row {row} has L2 norm {norm} but the store is flagged normalized")]
    NotNormalized { row: usize, norm: f64 },

    #[error("row {row} has zero L2 norm and cannot be normalized")]
    ZeroNorm { row: usize },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("label {label} at index {index} is outside [0, {num_classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("k = {k} out of range for N = {n} (need 1 <= k <= N - 1)")]
    KOutOfRange { k: usize, n: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite pointwise mutual information (collapsed marginal?)")]
    NonFinitePmi,

    #[error(
        "infeasible pruning: prune rate {prune_rate} with hard prune rate {hard_prune_rate} \
         exceeds N = {n}; maximum feasible hard prune rate is {max_hard_prune_rate}"
    )]
    Infeasible {
        prune_rate: f64,
        hard_prune_rate: f64,
        n: usize,
        max_hard_prune_rate: f64,
    },

    #[error("empty subset")]
    EmptySubset,

    #[error("coreset index {index} also appears in the test split")]
    TestOverlap { index: usize },

    #[error("no feasible hard prune rate in the search grid")]
    NoFeasibleBeta,

    #[error("label kind mismatch: expected {expected}, found {found}")]
    LabelKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
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
