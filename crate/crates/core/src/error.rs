use thiserror::Error;

use crate::engine::Phase;

/// Errors raised by the electrode model, the engine and the gesture harness.
///
/// Wire and link failures have their own types ([`crate::wire::DecodeError`],
/// [`crate::sim::LinkError`]) because callers handle them differently.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("mask size mismatch: expected {expected} electrodes, got {found}")]
    MaskSize { expected: usize, found: usize },

    #[error("electrode index {index} out of range for {total} electrodes")]
    IndexOutOfRange { index: usize, total: usize },

    #[error("invalid stimulation parameters: {0}")]
    InvalidParams(String),

    #[error("operation requires phase {expected}, engine is {actual}")]
    Phase { expected: Phase, actual: Phase },

    #[error("session refused: {0}")]
    Refused(String),

    #[error("t = {t_ms} ms is outside the gesture window [{start_ms}, {end_ms})")]
    OutOfWindow {
        t_ms: f64,
        start_ms: u64,
        end_ms: u64,
    },

    #[error("invalid gesture: {0}")]
    InvalidGesture(String),

    #[error("invalid script: {0}")]
    InvalidScript(String),

    #[error("invalid metric input: {0}")]
    InvalidMetric(String),

    #[error("malformed mask notation: {0}")]
    MaskSyntax(String),

    #[error("malformed trace: {0}")]
    TraceSyntax(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
