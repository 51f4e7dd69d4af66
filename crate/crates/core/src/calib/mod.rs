//! Calibration from measurements: spot fitting on camera frames, hole
//! detection in response maps, and the voltage→position mapping.
//!
//! These routines work in `f64` only; they sit on nalgebra's dense solvers.

pub mod blobs;
pub mod image;
pub mod lm;
pub mod mapping;
pub mod spot;

pub use blobs::{detect_holes, distortion_metrics, Blob, BlobSet, Distortion};
pub use image::{load_pgm, save_pgm, IntensityImage};
pub use mapping::{fit_mapping, invert_mapping, FitOptions, MappingFit, MappingModel};
pub use spot::{fit_spot, SpotFit};
