//! Shared fixtures and independent reference models for the integration tests.
//!
//! The oracles here deliberately avoid the crate's own geometry and
//! quadrature: the two-bounce trace uses nalgebra quaternions and Householder
//! matrices, the aperture oracle stratified Monte Carlo through the inverse
//! normal CDF.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cryoscan_core::optics::{BeamSpot, OpticalLayout};
use cryoscan_core::steering::MirrorPose;
use cryoscan_core::vector::Vec3;
use nalgebra::{Matrix3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/default.toml")
}

pub fn na(v: Vec3<f64>) -> Vector3<f64> {
    Vector3::new(v.x, v.y, v.z)
}

/// Householder reflector `I − 2 n nᵀ` for a unit normal.
pub fn householder(n: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() - 2.0 * n * n.transpose()
}

/// Mirror normal: rotate about X by `tilt_x`, then about the rotated Y axis.
/// Composed as one quaternion `q_y' · q_x = q_x · q_y`.
pub fn oracle_normal(pose: &MirrorPose<f64>, layout: &OpticalLayout<f64>) -> Vector3<f64> {
    let qx = UnitQuaternion::from_axis_angle(&Unit::new_normalize(na(layout.mems_x_axis)), pose.tilt_x);
    let qy = UnitQuaternion::from_axis_angle(&Unit::new_normalize(na(layout.mems_y_axis)), pose.tilt_y);
    (qx * qy) * na(layout.mems_rest_normal)
}

fn hit(origin: &Vector3<f64>, dir: &Vector3<f64>, point: &Vector3<f64>, normal: &Vector3<f64>) -> Vector3<f64> {
    let t = (point - origin).dot(normal) / dir.dot(normal);
    origin + dir * t
}

/// Device-plane landing point in mm, without aperture checks.
pub fn oracle_trace(pose: &MirrorPose<f64>, layout: &OpticalLayout<f64>) -> (f64, f64) {
    let o0 = na(layout.focuser_origin);
    let d0 = na(layout.focuser_direction);
    let n1 = oracle_normal(pose, layout);
    let p1 = hit(&o0, &d0, &na(layout.mems_pivot), &n1);
    let d1 = householder(&n1) * d0;
    let sm = &layout.stationary_mirror;
    let n2 = na(sm.normal);
    let p2 = hit(&p1, &d1, &na(sm.point), &n2);
    let d2 = householder(&n2) * d1;
    let dp = &layout.device_plane;
    let p3 = hit(&p2, &d2, &na(dp.point), &na(dp.normal));
    let rel = p3 - na(dp.point);
    (rel.dot(&na(dp.u)), rel.dot(&na(dp.v)))
}

/// Jittered strata of a unit normal: one draw per cell of `[0, 1]` split `m` ways.
fn normal_strata(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let std = Normal::new(0.0, 1.0).unwrap();
    let inv = 1.0 / m as f64;
    (0..m)
        .map(|i| std.inverse_cdf(((i as f64 + rng.random::<f64>()) * inv).clamp(1e-300, 1.0 - 1e-16)))
        .collect()
}

/// `m²` spot samples: the product of per-axis strata in the principal frame,
/// rotated and shifted onto the device plane (mm).
fn spot_samples(spot: &BeamSpot<f64>, m: usize, seed: u64, mut visit: impl FnMut(f64, f64)) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = normal_strata(m, &mut rng);
    let b = normal_strata(m, &mut rng);
    let (sa, sb) = (spot.sigma_major_um * 1e-3, spot.sigma_minor_um * 1e-3);
    let (s, c) = spot.orientation.sin_cos();
    for &za in &a {
        let (ax, ay) = (za * sa * c, za * sa * s);
        for &zb in &b {
            visit(spot.center.x + ax - zb * sb * s, spot.center.y + ay + zb * sb * c);
        }
    }
}

/// Fraction of `spot` power inside the disc, by stratified Monte Carlo with
/// `m²` samples.
pub fn mc_aperture_fraction(spot: &BeamSpot<f64>, center: (f64, f64), radius: f64, m: usize, seed: u64) -> f64 {
    let r2 = radius * radius;
    let mut inside = 0usize;
    spot_samples(spot, m, seed, |x, y| {
        if (x - center.0).powi(2) + (y - center.1).powi(2) <= r2 {
            inside += 1;
        }
    });
    inside as f64 / (m * m) as f64
}

/// Same scheme for an axis-aligned rectangle.
pub fn mc_rect_fraction(spot: &BeamSpot<f64>, min: (f64, f64), max: (f64, f64), m: usize, seed: u64) -> f64 {
    let mut inside = 0usize;
    spot_samples(spot, m, seed, |x, y| {
        if x >= min.0 && x <= max.0 && y >= min.1 && y <= max.1 {
            inside += 1;
        }
    });
    inside as f64 / (m * m) as f64
}
