//! Geometric beam path and spot model.
//!
//! The beam leaves the focuser, reflects off the MEMS mirror (tilted about its
//! pivot), folds at a stationary mirror and lands on the device plane. Device
//! plane coordinates are millimetres in an orthonormal in-plane basis whose
//! origin is the rest-pose landing point; `+u` and `+v` are the directions the
//! spot moves for small positive `tilt_x` and `tilt_y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, MissStage, Result};
use crate::integrate::integrate;
use crate::scalar::Real;
use crate::steering::{coord_to_tilt, ElectricalConfig, MirrorPose, VoltageCoord};
use crate::vector::{Vec2, Vec3};

const UNIT_TOL: f64 = 1e-9;
const GRAZING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub direction: Vec3<T>,
}

impl<T: Real> Ray<T> {
    pub fn new(origin: Vec3<T>, direction: Vec3<T>) -> Result<Self> {
        let direction = direction
            .normalized()
            .ok_or_else(|| Error::invalid("ray.direction", "zero length"))?;
        Ok(Self { origin, direction })
    }

    pub fn at(&self, t: T) -> Vec3<T> {
        self.origin + self.direction * t
    }

    /// Distance along the ray to the plane, if it is ahead and not grazing.
    pub fn hit_distance(&self, point: Vec3<T>, normal: Vec3<T>) -> Option<T> {
        let denom = self.direction.dot(normal);
        if denom.abs() <= T::lit(GRAZING) {
            return None;
        }
        let t = (point - self.origin).dot(normal) / denom;
        (t >= T::zero() && t.is_finite()).then_some(t)
    }

    fn miss(&self, stage: MissStage) -> Error {
        let o = self.origin;
        let d = self.direction;
        Error::Miss {
            stage,
            origin: [o.x.as_f64(), o.y.as_f64(), o.z.as_f64()],
            direction: [d.x.as_f64(), d.y.as_f64(), d.z.as_f64()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane<T> {
    pub point: Vec3<T>,
    pub normal: Vec3<T>,
}

/// Device plane with an in-plane orthonormal basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DevicePlane<T> {
    pub point: Vec3<T>,
    pub normal: Vec3<T>,
    pub u: Vec3<T>,
    pub v: Vec3<T>,
}

impl<T: Real> DevicePlane<T> {
    pub fn project(&self, p: Vec3<T>) -> Vec2<T> {
        let d = p - self.point;
        Vec2::new(d.dot(self.u), d.dot(self.v))
    }
}

/// Specular reflection at a plane: `d' = d − 2 (d·n) n`, new origin at the hit.
pub fn reflect<T: Real>(ray: &Ray<T>, surface_point: Vec3<T>, normal: Vec3<T>) -> Result<Ray<T>> {
    let t = ray
        .hit_distance(surface_point, normal)
        .ok_or(Error::NoIntersection)?;
    let d = ray.direction;
    Ok(Ray {
        origin: ray.at(t),
        direction: d - normal * (T::lit(2.0) * d.dot(normal)),
    })
}

/// Two-bounce folded geometry from which the default layout is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldedGeometry<T> {
    pub focal_length_mm: T,
    pub focuser_to_mems_mm: T,
    pub mems_to_fold_mm: T,
    /// Angle of incidence on the MEMS mirror at rest.
    pub mems_incidence: T,
    /// Angle of incidence on the stationary fold mirror.
    pub fold_incidence: T,
    pub fold_aperture_radius_mm: T,
}

impl<T: Real> Default for FoldedGeometry<T> {
    fn default() -> Self {
        Self {
            focal_length_mm: T::lit(150.0),
            focuser_to_mems_mm: T::lit(20.0),
            mems_to_fold_mm: T::lit(30.0),
            mems_incidence: T::lit(5f64.to_radians()),
            fold_incidence: T::lit(45f64.to_radians()),
            fold_aperture_radius_mm: T::lit(12.7),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalLayout<T> {
    pub focuser_origin: Vec3<T>,
    pub focuser_direction: Vec3<T>,
    pub mems_pivot: Vec3<T>,
    pub mems_rest_normal: Vec3<T>,
    /// Mirror axis for `tilt_x`.
    pub mems_x_axis: Vec3<T>,
    /// Mirror axis for `tilt_y` at zero `tilt_x`.
    pub mems_y_axis: Vec3<T>,
    pub stationary_mirror: Plane<T>,
    pub stationary_aperture_radius: T,
    pub device_plane: DevicePlane<T>,
    pub focal_length: T,
}

impl<T: Real> Default for OpticalLayout<T> {
    fn default() -> Self {
        Self::folded(&FoldedGeometry::default()).expect("default geometry is valid")
    }
}

impl<T: Real> OpticalLayout<T> {
    /// Builds a layout: focuser on the x axis aiming at the MEMS pivot, the
    /// first fold in the xy plane, the second fold turning the beam towards
    /// `+z`-ish, and the device plane normal to the rest ray at the focal
    /// distance.
    pub fn folded(g: &FoldedGeometry<T>) -> Result<Self> {
        let zero = T::zero();
        let one = T::one();
        let two = T::lit(2.0);
        let last_leg = g.focal_length_mm - g.focuser_to_mems_mm - g.mems_to_fold_mm;
        for (name, v) in [
            ("focuser_to_mems_mm", g.focuser_to_mems_mm),
            ("mems_to_fold_mm", g.mems_to_fold_mm),
            ("fold_aperture_radius_mm", g.fold_aperture_radius_mm),
            ("fold_to_device_mm", last_leg),
        ] {
            if !(v.is_finite() && v > zero) {
                return Err(Error::invalid(format!("layout.{name}"), "must be > 0"));
            }
        }
        for (name, a) in [("mems_incidence", g.mems_incidence), ("fold_incidence", g.fold_incidence)] {
            if !(a.is_finite() && a > zero && a < T::FRAC_PI_2() * T::lit(0.99)) {
                return Err(Error::invalid(format!("layout.{name}"), "must be in (0, 89) degrees"));
            }
        }
        let ez = Vec3::new(zero, zero, one);
        let f = Vec3::new(one, zero, zero);
        let origin = Vec3::zero();
        let pivot = f * g.focuser_to_mems_mm;

        let dev1 = T::PI() - two * g.mems_incidence;
        let out1 = Vec3::new(dev1.cos(), dev1.sin(), zero);
        let n1 = (out1 - f).normalized().expect("non-degenerate fold");
        let p2 = pivot + out1 * g.mems_to_fold_mm;

        let dev2 = T::PI() - two * g.fold_incidence;
        let out2 = out1 * dev2.cos() + ez * dev2.sin();
        let n2 = (out2 - out1).normalized().expect("non-degenerate fold");
        let p3 = p2 + out2 * last_leg;

        let x_axis = ez;
        let y_axis = n1.cross(x_axis).normalized().expect("axes orthogonal");

        // In-plane basis from the first-order response of the landing point.
        let fold = |d: Vec3<T>| d - n2 * (two * d.dot(n2));
        let response = |axis: Vec3<T>| {
            let dn = axis.cross(n1);
            let dd = -(n1 * f.dot(dn) + dn * f.dot(n1)) * two;
            let dd2 = fold(dd);
            dd2 - out2 * dd2.dot(out2)
        };
        let u = response(x_axis)
            .normalized()
            .ok_or_else(|| Error::invalid("layout", "tilt_x does not move the spot"))?;
        let rv = response(y_axis);
        let v = (rv - u * rv.dot(u))
            .normalized()
            .ok_or_else(|| Error::invalid("layout", "tilt axes map onto one direction"))?;

        let layout = Self {
            focuser_origin: origin,
            focuser_direction: f,
            mems_pivot: pivot,
            mems_rest_normal: n1,
            mems_x_axis: x_axis,
            mems_y_axis: y_axis,
            stationary_mirror: Plane { point: p2, normal: n2 },
            stationary_aperture_radius: g.fold_aperture_radius_mm,
            device_plane: DevicePlane {
                point: p3,
                normal: -out2,
                u,
                v,
            },
            focal_length: g.focal_length_mm,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        // Scaled so f32 layouts built from the same geometry still pass.
        let tol = T::lit(UNIT_TOL).max(T::epsilon() * T::lit(64.0));
        for (name, n) in [
            ("focuser_direction", self.focuser_direction),
            ("mems_rest_normal", self.mems_rest_normal),
            ("mems_x_axis", self.mems_x_axis),
            ("mems_y_axis", self.mems_y_axis),
            ("stationary_mirror.normal", self.stationary_mirror.normal),
            ("device_plane.normal", self.device_plane.normal),
            ("device_plane.u", self.device_plane.u),
            ("device_plane.v", self.device_plane.v),
        ] {
            if !n.is_unit(tol) {
                return Err(Error::invalid(format!("layout.{name}"), "not unit length"));
            }
        }
        let dp = &self.device_plane;
        if dp.u.dot(dp.v).abs() > tol || dp.u.dot(dp.normal).abs() > tol || dp.v.dot(dp.normal).abs() > tol {
            return Err(Error::invalid("layout.device_plane", "basis not orthonormal"));
        }
        if !(self.focal_length.is_finite() && self.focal_length > T::zero()) {
            return Err(Error::invalid("layout.focal_length", "must be > 0"));
        }
        Ok(())
    }

    pub fn focuser_ray(&self) -> Ray<T> {
        Ray {
            origin: self.focuser_origin,
            direction: self.focuser_direction,
        }
    }
}

/// Mirror normal after rotating by `tilt_x` about the mirror X axis and then by
/// `tilt_y` about the rotated Y axis.
pub fn pose_to_normal<T: Real>(pose: &MirrorPose<T>, layout: &OpticalLayout<T>) -> Vec3<T> {
    let x = layout.mems_x_axis;
    let n = layout.mems_rest_normal.rotated(x, pose.tilt_x);
    let y = layout.mems_y_axis.rotated(x, pose.tilt_x);
    n.rotated(y, pose.tilt_y)
}

/// Full beam path for one pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamPath<T> {
    /// Focuser, MEMS hit, stationary-mirror hit, device hit.
    pub points: [Vec3<T>; 4],
    pub position: Vec2<T>,
}

impl<T: Real> BeamPath<T> {
    pub fn length(&self) -> T {
        self.points
            .windows(2)
            .fold(T::zero(), |acc, w| acc + (w[1] - w[0]).norm())
    }
}

pub fn trace_path<T: Real>(pose: &MirrorPose<T>, layout: &OpticalLayout<T>) -> Result<BeamPath<T>> {
    let start = layout.focuser_ray();
    let normal = pose_to_normal(pose, layout);
    let at_mems = reflect(&start, layout.mems_pivot, normal).map_err(|_| start.miss(MissStage::Mems))?;

    let sm = &layout.stationary_mirror;
    let at_fold =
        reflect(&at_mems, sm.point, sm.normal).map_err(|_| at_mems.miss(MissStage::StationaryMirror))?;
    if (at_fold.origin - sm.point).norm() > layout.stationary_aperture_radius {
        return Err(at_mems.miss(MissStage::StationaryMirror));
    }

    let dp = &layout.device_plane;
    let t = at_fold
        .hit_distance(dp.point, dp.normal)
        .ok_or_else(|| at_fold.miss(MissStage::DevicePlane))?;
    let hit = at_fold.at(t);
    Ok(BeamPath {
        points: [start.origin, at_mems.origin, at_fold.origin, hit],
        position: dp.project(hit),
    })
}

/// Device-plane landing point in millimetres.
pub fn trace_to_device<T: Real>(pose: &MirrorPose<T>, layout: &OpticalLayout<T>) -> Result<Vec2<T>> {
    trace_path(pose, layout).map(|p| p.position)
}

/// Bounding box of the landing points over an `n × n` command grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanExtent<T> {
    pub min: Vec2<T>,
    pub max: Vec2<T>,
    pub hits: usize,
    pub misses: Vec<VoltageCoord<T>>,
}

impl<T: Real> ScanExtent<T> {
    pub fn width(&self) -> T {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> T {
        self.max.y - self.min.y
    }
}

/// Grid coordinate `i` of `n` evenly spaced points on `[lo, hi]`, hitting
/// both endpoints exactly.
pub(crate) fn linspace_at<T: Real>(lo: T, hi: T, i: usize, n: usize) -> T {
    if i + 1 >= n {
        return hi;
    }
    let s = T::from_usize(i).unwrap() / T::from_usize(n - 1).unwrap();
    lo + (hi - lo) * s
}

pub fn scan_extent<T: Real>(layout: &OpticalLayout<T>, cfg: &ElectricalConfig<T>, n: usize) -> Result<ScanExtent<T>> {
    if n < 2 {
        return Err(Error::invalid("n", "grid resolution must be >= 2"));
    }
    let mut min = Vec2::new(T::infinity(), T::infinity());
    let mut max = Vec2::new(T::neg_infinity(), T::neg_infinity());
    let mut hits = 0;
    let mut misses = Vec::new();
    let one = T::one();
    for iy in 0..n {
        for ix in 0..n {
            let v = VoltageCoord::clamped(linspace_at(-one, one, ix, n), linspace_at(-one, one, iy, n));
            match trace_to_device(&coord_to_tilt(&v, cfg), layout) {
                Ok(p) => {
                    hits += 1;
                    min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
                    max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
                }
                Err(Error::Miss { .. }) => misses.push(v),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(ScanExtent { min, max, hits, misses })
}

/// Finds the per-axis tilt range for which the full-range scan box measures
/// `width × height` millimetres, by alternating bisection on each axis.
pub fn tilt_range_for_extent<T: Real>(layout: &OpticalLayout<T>, width: T, height: T) -> Result<[T; 2]> {
    const EDGE_SAMPLES: usize = 101;
    let box_size = |theta: [T; 2]| -> Result<(T, T)> {
        let mut lo = Vec2::new(T::infinity(), T::infinity());
        let mut hi = Vec2::new(T::neg_infinity(), T::neg_infinity());
        let one = T::one();
        for i in 0..EDGE_SAMPLES {
            let s = linspace_at(-one, one, i, EDGE_SAMPLES);
            for (a, b) in [(s, -one), (s, one), (-one, s), (one, s)] {
                let p = trace_to_device(&MirrorPose::new(theta[0] * a, theta[1] * b), layout)?;
                lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
        }
        Ok((hi.x - lo.x, hi.y - lo.y))
    };
    let half = T::lit(0.5);
    let mut theta = [
        (width / (T::lit(4.0) * layout.focal_length)).atan(),
        (height / (T::lit(4.0) * layout.focal_length)).atan(),
    ];
    for _ in 0..4 {
        for axis in 0..2 {
            let target = if axis == 0 { width } else { height };
            let (mut a, mut b) = (T::zero(), T::FRAC_PI_4() * half);
            for _ in 0..200 {
                let m = (a + b) * half;
                let mut t = theta;
                t[axis] = m;
                let size = match box_size(t) {
                    Ok((w, h)) => if axis == 0 { w } else { h },
                    Err(Error::Miss { .. }) => T::infinity(),
                    Err(e) => return Err(e),
                };
                if size < target {
                    a = m;
                } else {
                    b = m;
                }
                if b - a <= T::epsilon() * m {
                    break;
                }
            }
            theta[axis] = (a + b) * half;
        }
    }
    Ok(theta)
}

/// Wavelength band the focusing optics support, nm.
pub const BAND_NM: (f64, f64) = (180.0, 2000.0);

pub fn check_band<T: Real>(wavelength_nm: T) -> Result<()> {
    let w = wavelength_nm.as_f64();
    if w.is_finite() && (BAND_NM.0..=BAND_NM.1).contains(&w) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "wavelength_nm",
            value: w,
            lo: BAND_NM.0,
            hi: BAND_NM.1,
        })
    }
}

/// Spot size law: diameter grows linearly with the distance from the design
/// wavelength of the focuser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotModelConfig<T> {
    pub design_wavelength_nm: T,
    /// ±2σ diameter at the design wavelength, μm.
    pub min_diameter_um: T,
    pub chromatic_slope_um_per_nm: T,
    /// σ_major / σ_minor, ≥ 1.
    pub ellipticity: T,
    /// Major-axis direction in the device plane, radians from +u.
    pub orientation: T,
}

impl<T: Real> Default for SpotModelConfig<T> {
    fn default() -> Self {
        Self {
            design_wavelength_nm: T::lit(650.0),
            min_diameter_um: T::lit(80.0),
            chromatic_slope_um_per_nm: T::lit(0.3),
            ellipticity: T::one(),
            orientation: T::zero(),
        }
    }
}

impl<T: Real> SpotModelConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_diameter_um.is_finite() && self.min_diameter_um > T::zero()) {
            return Err(Error::invalid("spot.min_diameter_um", "must be > 0"));
        }
        if !(self.chromatic_slope_um_per_nm.is_finite() && self.chromatic_slope_um_per_nm >= T::zero()) {
            return Err(Error::invalid("spot.chromatic_slope_um_per_nm", "must be >= 0"));
        }
        if !(self.ellipticity.is_finite() && self.ellipticity >= T::one()) {
            return Err(Error::invalid("spot.ellipticity", "must be >= 1"));
        }
        check_band(self.design_wavelength_nm)
    }

    pub fn diameter_um(&self, wavelength_nm: T) -> T {
        self.min_diameter_um + self.chromatic_slope_um_per_nm * (wavelength_nm - self.design_wavelength_nm).abs()
    }
}

/// Elliptical Gaussian spot on the device plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSpot<T> {
    /// Device-plane centre, mm.
    pub center: Vec2<T>,
    pub sigma_major_um: T,
    pub sigma_minor_um: T,
    pub orientation: T,
    pub total_power: T,
    pub wavelength_nm: T,
}

impl<T: Real> BeamSpot<T> {
    /// ±2σ diameters along the major and minor axes, μm.
    pub fn diameters_um(&self) -> (T, T) {
        let four = T::lit(4.0);
        (four * self.sigma_major_um, four * self.sigma_minor_um)
    }

    /// ±2σ diameter of the equivalent circular spot, μm.
    pub fn mean_diameter_um(&self) -> T {
        T::lit(4.0) * (self.sigma_major_um * self.sigma_minor_um).sqrt()
    }

    /// Covariance in device-plane mm²: `[xx, xy, yy]`.
    pub fn covariance_mm2(&self) -> [T; 3] {
        let k = T::lit(1e-3);
        let a = self.sigma_major_um * k;
        let b = self.sigma_minor_um * k;
        let (s, c) = self.orientation.sin_cos();
        let (a2, b2) = (a * a, b * b);
        [a2 * c * c + b2 * s * s, (a2 - b2) * s * c, a2 * s * s + b2 * c * c]
    }
}

pub fn spot_profile<T: Real>(center: Vec2<T>, wavelength_nm: T, cfg: &SpotModelConfig<T>, power: T) -> Result<BeamSpot<T>> {
    check_band(wavelength_nm)?;
    if !(power.is_finite() && power >= T::zero()) {
        return Err(Error::invalid("power", "must be >= 0"));
    }
    let sigma_mean = cfg.diameter_um(wavelength_nm) / T::lit(4.0);
    let r = cfg.ellipticity.sqrt();
    Ok(BeamSpot {
        center,
        sigma_major_um: sigma_mean * r,
        sigma_minor_um: sigma_mean / r,
        orientation: cfg.orientation,
        total_power: power,
        wavelength_nm,
    })
}

const AP_ABS_TOL: f64 = 1e-9;
const AP_REL_TOL: f64 = 1e-6;
/// Beyond this many σ the Gaussian contributes below f64 resolution.
const TAIL_SIGMAS: f64 = 12.0;

/// Power of `spot` passing a circular aperture, by adaptive quadrature.
///
/// In the spot's principal frame the disc stays a disc, so the inner
/// integral across the chord is an error-function difference and only the
/// outer integral is numeric. The chord parameter `y = cy + R sin t` removes
/// the square-root endpoint singularity.
pub fn aperture_power<T: Real>(spot: &BeamSpot<T>, hole_center: Vec2<T>, hole_radius: T) -> T {
    if !(hole_radius > T::zero()) || spot.total_power <= T::zero() {
        return T::zero();
    }
    let k = T::lit(1e-3);
    let sx = spot.sigma_major_um * k;
    let sy = spot.sigma_minor_um * k;
    let d = hole_center - spot.center;
    let far = T::lit(TAIL_SIGMAS) * sx;
    if d.norm() - hole_radius > far {
        return T::zero();
    }
    if d.norm() + far < hole_radius {
        return spot.total_power;
    }
    let (s, c) = spot.orientation.sin_cos();
    // Hole centre in the principal frame (major axis along x).
    let cx = d.x * c + d.y * s;
    let cy = -d.x * s + d.y * c;
    let r = hole_radius;
    let inv_sqrt_2pi = T::one() / (T::lit(2.0) * T::PI()).sqrt();

    let integrand = |t: T| {
        let (st, ct) = t.sin_cos();
        let y = cy + r * st;
        let h = r * ct;
        let py = (-(y * y) / (T::lit(2.0) * sy * sy)).exp() * inv_sqrt_2pi / sy;
        let px = ((cx + h) / sx).norm_cdf() - ((cx - h) / sx).norm_cdf();
        py * px * r * ct
    };
    let hp = T::FRAC_PI_2();
    // Breakpoints where the chord crosses the spot's core in y.
    let mut breaks = Vec::with_capacity(7);
    for m in [-6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0] {
        let yb = (T::lit(m) * sy - cy) / r;
        if yb > -T::one() && yb < T::one() {
            breaks.push(yb.asin());
        }
    }
    let frac = integrate(integrand, -hp, hp, &breaks, T::lit(AP_ABS_TOL), T::lit(AP_REL_TOL));
    spot.total_power * frac.max(T::zero()).min(T::one())
}

/// Power of `spot` inside the axis-aligned device-plane rectangle.
pub fn rect_power<T: Real>(spot: &BeamSpot<T>, min: Vec2<T>, max: Vec2<T>) -> T {
    if spot.total_power <= T::zero() || !(max.x > min.x && max.y > min.y) {
        return T::zero();
    }
    let [sxx, sxy, syy] = spot.covariance_mm2();
    let sy = syy.sqrt();
    let slope = sxy / syy;
    let cond_sd = (sxx - sxy * slope).max(T::zero()).sqrt();
    let mu = spot.center;
    let inv_sqrt_2pi = T::one() / (T::lit(2.0) * T::PI()).sqrt();
    let integrand = |y: T| {
        let z = (y - mu.y) / sy;
        let py = (-(z * z) * T::lit(0.5)).exp() * inv_sqrt_2pi / sy;
        let m = mu.x + slope * (y - mu.y);
        let px = if cond_sd > T::zero() {
            ((max.x - m) / cond_sd).norm_cdf() - ((min.x - m) / cond_sd).norm_cdf()
        } else if m >= min.x && m <= max.x {
            T::one()
        } else {
            T::zero()
        };
        py * px
    };
    let span = T::lit(TAIL_SIGMAS) * sy;
    let lo = min.y.max(mu.y - span);
    let hi = max.y.min(mu.y + span);
    if lo >= hi {
        return T::zero();
    }
    let breaks: Vec<T> = [-3.0, -1.0, 0.0, 1.0, 3.0]
        .iter()
        .map(|&m| mu.y + T::lit(m) * sy)
        .collect();
    let frac = integrate(integrand, lo, hi, &breaks, T::lit(AP_ABS_TOL), T::lit(AP_REL_TOL));
    spot.total_power * frac.max(T::zero()).min(T::one())
}
