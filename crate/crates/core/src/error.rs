use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("ingestion failed for {}: {reason}", path.display())]
    Ingest { path: PathBuf, reason: String },

    #[error("write failed for {}: {reason}", path.display())]
    Write { path: PathBuf, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no cluster spans enough frames to be foreground")]
    NoForegroundCluster,

    #[error("no detected frame is available to donate a mask")]
    UnfillableSequence,

    #[error("every donor mask is empty")]
    NoDonors,

    #[error("frame {frame} cannot be filled: {reason}")]
    UnfillableFrame { frame: usize, reason: String },
}

impl Error {
    /// Stable machine-readable name, used in diagnostics and run summaries.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptyMask => "empty_mask",
            Error::ZeroVector => "zero_vector",
            Error::Ingest { .. } => "ingest",
            Error::Write { .. } => "write",
            Error::Config(_) => "config",
            Error::NoForegroundCluster => "no_foreground_cluster",
            Error::UnfillableSequence => "unfillable_sequence",
            Error::NoDonors => "no_donors",
            Error::UnfillableFrame { .. } => "unfillable_frame",
        }
    }

    /// Frame the error is attached to, if any.
    pub fn frame(&self) -> Option<usize> {
        match self {
            Error::UnfillableFrame { frame, .. } => Some(*frame),
            _ => None,
        }
    }

    pub(crate) fn ingest(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Ingest {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn write(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Write {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn dims(left: (usize, usize), right: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            left_w: left.0,
            left_h: left.1,
            right_w: right.0,
            right_h: right.1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
