//! Control service for the beam-steering twin: a session with scans, steering
//! and calibration, served over HTTP, plus the `cryoscan` command line.

pub mod cli;
pub mod error;
pub mod http;
pub mod session;

pub use error::{Result, ServiceError};
pub use session::{Session, SessionOptions};
