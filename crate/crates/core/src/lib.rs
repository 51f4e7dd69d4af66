//! Digital twin and calibration toolkit for a cryogenic MEMS beam-steering
//! bench: drive electronics, folded optics, masked resonator, scan engine and
//! map-based calibration.
//!
//! Everything numeric is generic over [`scalar::Real`]; the aliases below
//! pin the common `f64` instantiations.

pub mod calib;
pub mod config;
pub mod device;
pub mod error;
pub mod integrate;
pub mod mapfile;
pub mod optics;
pub mod scan;
pub mod scalar;
pub mod steering;
pub mod twin;
pub mod vector;

pub use error::{Error, Result};

pub type VoltageCoord = steering::VoltageCoord<f64>;
pub type DriveVoltages = steering::DriveVoltages<f64>;
pub type ElectricalConfig = steering::ElectricalConfig<f64>;
pub type MirrorPose = steering::MirrorPose<f64>;
pub type MirrorState = steering::MirrorState<f64>;
pub type OpticalLayout = optics::OpticalLayout<f64>;
pub type SpotModelConfig = optics::SpotModelConfig<f64>;
pub type BeamSpot = optics::BeamSpot<f64>;
pub type MaskPattern = device::MaskPattern<f64>;
pub type MkidParams = device::MkidParams<f64>;
pub type Vec2 = vector::Vec2<f64>;
pub type Vec3 = vector::Vec3<f64>;

pub type VoltageCoordF32 = steering::VoltageCoord<f32>;
pub type ElectricalConfigF32 = steering::ElectricalConfig<f32>;
pub type OpticalLayoutF32 = optics::OpticalLayout<f32>;
