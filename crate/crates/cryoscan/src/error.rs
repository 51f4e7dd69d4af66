use cryoscan_core::Error as CoreError;
use serde::Serialize;
use thiserror::Error;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("session is busy ({0})")]
    Busy(&'static str),

    #[error("session is in fault: {0}")]
    Fault(String),

    #[error("physical targets need a loaded calibration")]
    Uncalibrated,

    #[error("{0} not found")]
    NotFound(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Wire form of an error.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nearest_mm: Option<[f64; 2]>,
}

impl ServiceError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Busy(_) => "busy",
            ServiceError::Fault(_) => "fault",
            ServiceError::Uncalibrated => "uncalibrated",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::BadRequest(_) => "validation",
            ServiceError::Core(CoreError::Interlock { .. }) => "interlock",
            ServiceError::Core(CoreError::Unreachable { .. }) => "unreachable",
            ServiceError::Core(e) if e.is_validation() => "validation",
            ServiceError::Core(_) => "runtime",
        }
    }

    /// Caller's fault rather than the instrument's.
    pub fn is_validation(&self) -> bool {
        !matches!(self.code(), "runtime" | "fault")
    }

    pub fn body(&self) -> ErrorBody {
        let nearest_mm = match self {
            ServiceError::Core(CoreError::Unreachable {
                nearest_x_mm,
                nearest_y_mm,
                ..
            }) => Some([*nearest_x_mm, *nearest_y_mm]),
            _ => None,
        };
        ErrorBody {
            error: self.code(),
            message: self.to_string(),
            nearest_mm,
        }
    }
}
