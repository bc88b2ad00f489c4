//! Crate-wide error and its process exit code.

use thiserror::Error;

use crate::controller::protocol::ProtocolError;
use crate::controller::ControllerError;
use crate::io::FormatError;
use crate::segment::SegmentError;
use crate::synth::SynthError;
use crate::tac::TacError;
use crate::trace::{ShapeError, ValidationError};
use crate::vav::VavError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Tac(#[from] TacError),
    #[error(transparent)]
    Vav(#[from] VavError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

impl Error {
    /// 2 for bad flags or arguments, 4 for inputs that carry no attention
    /// signal, 3 for every other data problem.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Synth(_) => EXIT_USAGE,
            Error::Tac(TacError::DegenerateAttention | TacError::EmptyPrefix)
            | Error::Controller(ControllerError::AllDegenerate)
            | Error::Protocol(ProtocolError::Controller(ControllerError::AllDegenerate)) => {
                EXIT_DEGENERATE
            }
            Error::Vav(VavError::ZeroTextAttention { .. })
            | Error::Controller(ControllerError::Vav {
                source: VavError::ZeroTextAttention { .. },
                ..
            }) => EXIT_DEGENERATE,
            _ => EXIT_DATA,
        }
    }
}
