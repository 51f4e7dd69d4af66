use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which leg of the optical path a ray was lost on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MissStage {
    Mems,
    StationaryMirror,
    DevicePlane,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("coordinate [{vx}, {vy}] lies in instability region {region}")]
    Interlock { vx: f64, vy: f64, region: usize },

    #[error("ray is parallel to the surface or points away from it")]
    NoIntersection,

    #[error("ray missed the {stage:?}; last segment from {origin:?} along {direction:?}")]
    Miss {
        stage: MissStage,
        origin: [f64; 3],
        direction: [f64; 3],
    },

    #[error("averaging window {window} s is empty or longer than the session ({elapsed} s)")]
    EmptyWindow { window: f64, elapsed: f64 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("calibration failed: residual {residual_rms_um:.1} um above gate {gate_um:.1} um ({matched} correspondences)")]
    CalibrationFailed {
        residual_rms_um: f64,
        gate_um: f64,
        matched: usize,
        residuals_um: Vec<f64>,
    },

    #[error("target ({x_mm}, {y_mm}) mm is outside the reachable extent; nearest reachable point ({nearest_x_mm}, {nearest_y_mm}) mm")]
    Unreachable {
        x_mm: f64,
        y_mm: f64,
        nearest_x_mm: f64,
        nearest_y_mm: f64,
    },

    #[error("blob has undefined second moments (needs at least two samples)")]
    UndefinedMoments,

    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::OutOfRange { .. }
                | Error::Invalid { .. }
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::Config { .. }
                | Error::Degenerate(_)
                | Error::Unreachable { .. }
        )
    }
}
