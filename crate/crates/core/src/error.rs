use thiserror::Error;

/// Errors produced by the model, fitting, simulation and I/O routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("model pole hit at t = {t} s")]
    PoleHit { t: f64 },

    #[error("curve never reaches the cutoff voltage {v_cutoff} V on the valid domain")]
    NoCrossing { v_cutoff: f64 },

    #[error("phase segmentation failed: {0}")]
    SegmentationFailed(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("period mismatch: {0}")]
    PeriodMismatch(String),

    #[error("insufficient grid: {0}")]
    InsufficientGrid(String),

    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("line {line}: value out of range: {msg}")]
    Range { line: usize, msg: String },

    #[error("empty load program")]
    EmptyProgram,

    #[error("time step {dt} s is coarser than the shortest program step {step} s")]
    DtTooCoarse { dt: f64, step: f64 },

    #[error("envelope ordering violated at t = {t} s: {msg}")]
    EnvelopeOrdering { t: f64, msg: String },

    #[error("line {line}: time {t} s does not increase")]
    NonMonotoneTime { line: usize, t: f64 },

    #[error("curve has no current column")]
    MissingCurrent,

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
