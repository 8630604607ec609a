use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("connectome is not square: {rows} data rows, row {row} has {cols} columns")]
    NonSquare {
        rows: usize,
        row: usize,
        cols: usize,
    },

    #[error("negative connection weight {value} at ({row}, {col})")]
    NegativeWeight { row: usize, col: usize, value: f64 },

    #[error("adjacency asymmetry {diff:e} at ({row}, {col}) exceeds 1e-6")]
    AsymmetryTooLarge { row: usize, col: usize, diff: f64 },

    #[error("duplicate region name {0:?}")]
    DuplicateRegionName(String),

    #[error("invalid connectome: {0}")]
    InvalidConnectome(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite input value")]
    NonFiniteInput,

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("non-finite value produced by {op}")]
    NonFiniteDetected { op: &'static str },

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),

    #[error("state became non-finite at step {step} (t = {t})")]
    NonFiniteState { step: usize, t: f64 },

    #[error("time {t} is outside the trajectory window [{lo}, {hi}]")]
    OutOfWindow { t: f64, lo: f64, hi: f64 },

    #[error("subject {subject:?} spans {span} which exceeds the horizon {horizon}")]
    InfeasibleWindow {
        subject: String,
        span: f64,
        horizon: f64,
    },

    #[error("invalid subject {id:?}: {reason}")]
    InvalidSubject { id: String, reason: String },

    #[error("normalization range is degenerate (all values equal {0})")]
    DegenerateRange(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Diverged(_) | Error::NonFiniteState { .. } | Error::NonFiniteDetected { .. }
        )
    }
}
