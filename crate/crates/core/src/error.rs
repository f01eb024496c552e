//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Tensor/network shape mismatch. `axis` names the offending axis.
    #[error("dimension error on axis `{axis}`: {msg}")]
    Dimension { axis: String, msg: String },

    /// Class label outside the valid range of the output head.
    #[error("label error: label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    /// Architecture shorthand could not be parsed. `pos` is the byte offset
    /// of the offending token.
    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    /// Receptive-field geometry requested past a layer with no spatial
    /// structure.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Malformed binary container. `offset` is the byte offset where the
    /// problem was detected.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Numerically invalid input (non-finite values and the like).
    #[error("value error: {0}")]
    Value(String),

    /// Invalid input data (degenerate boxes, non-orthogonal rotations, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Inconsistent or incomplete configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Training diverged; the iteration index points at the failing step.
    #[error("training aborted at iteration {iteration}: {msg}")]
    TrainingAbort { iteration: u64, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dimension(axis: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Dimension {
            axis: axis.into(),
            msg: msg.into(),
        }
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub fn parse(pos: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            pos,
            msg: msg.into(),
        }
    }
}
