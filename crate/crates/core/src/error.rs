use thiserror::Error;

/// Errors raised by the chart, calibration and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid observation: {0}")]
    InvalidObservation(f64),

    #[error("no data: {0}")]
    NoData(&'static str),

    #[error("degenerate out-of-control specification: {0}")]
    DegenerateSpec(String),

    #[error("internal state inconsistency: {0}")]
    InternalState(String),

    #[error("calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("snapshot error: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
