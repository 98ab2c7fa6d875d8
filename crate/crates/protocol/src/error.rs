use thiserror::Error;

use crate::frame::{FrameError, Tag};
use crate::record::Status;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Core(#[from] archnet_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {message} payload: {reason}")]
    Payload { message: &'static str, reason: String },
    #[error("expected {expected:?}, received {got:?}")]
    UnexpectedMessage { expected: &'static str, got: Tag },
    #[error("{what} digest mismatch: expected {expected}, computed {actual}")]
    DigestMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },
    #[error("remote error {code:?}: {message}")]
    Remote { code: ErrorCode, message: String },
    #[error("timed out {0}")]
    Timeout(String),
    #[error("negative duration for {0}")]
    NegativeDuration(&'static str),
    #[error("illegal task transition {from:?} -> {to:?}")]
    IllegalTransition { from: Status, to: Status },
    #[error("connection to {addr} failed: {source}")]
    Connect {
        addr: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// Codes carried in `Error` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    NoTask,
    ShapeMismatch,
    DigestMismatch,
    MalformedCheckpoint,
    ValidationFailed,
    WorkerLost,
    TrainingFailed,
    BadRequest,
    Shutdown,
    Unknown(u16),
}

impl ErrorCode {
    pub fn to_u16(self) -> u16 {
        match self {
            ErrorCode::NoTask => 1,
            ErrorCode::ShapeMismatch => 2,
            ErrorCode::DigestMismatch => 3,
            ErrorCode::MalformedCheckpoint => 4,
            ErrorCode::ValidationFailed => 5,
            ErrorCode::WorkerLost => 6,
            ErrorCode::TrainingFailed => 7,
            ErrorCode::BadRequest => 8,
            ErrorCode::Shutdown => 9,
            ErrorCode::Unknown(c) => c,
        }
    }

    pub fn from_u16(c: u16) -> Self {
        match c {
            1 => ErrorCode::NoTask,
            2 => ErrorCode::ShapeMismatch,
            3 => ErrorCode::DigestMismatch,
            4 => ErrorCode::MalformedCheckpoint,
            5 => ErrorCode::ValidationFailed,
            6 => ErrorCode::WorkerLost,
            7 => ErrorCode::TrainingFailed,
            8 => ErrorCode::BadRequest,
            9 => ErrorCode::Shutdown,
            other => ErrorCode::Unknown(other),
        }
    }
}
