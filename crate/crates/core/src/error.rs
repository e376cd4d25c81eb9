use thiserror::Error;

use crate::dataio::DumpError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("batch for {expected} loss contains a {found} state")]
    WrongLabel {
        expected: &'static str,
        found: &'static str,
    },

    #[error("dataset must contain both safe and unsafe states")]
    SingleClass,

    #[error("{0} class is empty")]
    EmptyClass(&'static str),

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("steering direction norm {norm:e} is below the degenerate cutoff")]
    DegenerateDirection { norm: f64 },

    #[error("need at least 2 distinct source ids to split, found {0}")]
    TooFewSources(usize),

    #[error("bank must contain at least one barrier")]
    EmptyBank,

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("start state is {found} but this check requires a {required} start")]
    WrongStart {
        required: &'static str,
        found: &'static str,
    },

    #[error(transparent)]
    Dump(#[from] DumpError),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
