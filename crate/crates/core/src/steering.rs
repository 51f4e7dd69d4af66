//! Electrical drive chain of the two-axis MEMS mirror.
//!
//! A normalized command in `[-1, 1]²` is turned into four channel voltages by a
//! symmetric differential map, and the per-axis differential sets the
//! mechanical tilt. When the cabling adds more capacitance than the driver can
//! absorb, the tilt response compresses towards the range edges; that
//! compression is modelled by the normalized saturation law
//! `g(v; κ) = tanh(κ v) / tanh(κ)` with `κ = κ₀ · r`, where `r` is the excess
//! cable capacitance relative to the mirror's own capacitance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Normalized mirror command. `[0, 0]` is the rest position.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VoltageCoord<T> {
    pub vx: T,
    pub vy: T,
}

impl<T: Real> VoltageCoord<T> {
    pub fn new(vx: T, vy: T) -> Result<Self> {
        check_unit("vx", vx)?;
        check_unit("vy", vy)?;
        Ok(Self { vx, vy })
    }

    pub fn origin() -> Self {
        Self {
            vx: T::zero(),
            vy: T::zero(),
        }
    }

    /// Clamps each component into `[-1, 1]`. NaN maps to 0.
    pub fn clamped(vx: T, vy: T) -> Self {
        let c = |v: T| {
            if v.is_nan() {
                T::zero()
            } else {
                v.max(-T::one()).min(T::one())
            }
        };
        Self { vx: c(vx), vy: c(vy) }
    }

    pub fn axis(&self, axis: usize) -> T {
        if axis == 0 {
            self.vx
        } else {
            self.vy
        }
    }

    /// Chebyshev distance, the quantity limited by the per-axis slew rate.
    pub fn max_axis_distance(&self, other: &Self) -> T {
        (self.vx - other.vx).abs().max((self.vy - other.vy).abs())
    }

    pub fn distance(&self, other: &Self) -> T {
        (self.vx - other.vx).hypot(self.vy - other.vy)
    }
}

fn check_unit<T: Real>(what: &'static str, v: T) -> Result<()> {
    if v.is_finite() && v >= -T::one() && v <= T::one() {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what,
            value: v.as_f64(),
            lo: -1.0,
            hi: 1.0,
        })
    }
}

/// Voltages on the four drive lines, in volts.
///
/// Each channel lies within `[0, channel_max]`. Commands produced by
/// [`normalized_to_drive`] additionally keep `plus + minus` equal to the
/// configured common-mode sum on each axis; raw commands (see
/// [`MirrorState::step_channels`]) need not.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DriveVoltages<T> {
    pub x_plus: T,
    pub x_minus: T,
    pub y_plus: T,
    pub y_minus: T,
}

impl<T: Real> DriveVoltages<T> {
    pub fn new(x_plus: T, x_minus: T, y_plus: T, y_minus: T, channel_max: T) -> Result<Self> {
        let d = Self {
            x_plus,
            x_minus,
            y_plus,
            y_minus,
        };
        for (name, v) in ["x_plus", "x_minus", "y_plus", "y_minus"]
            .into_iter()
            .zip(d.channels())
        {
            if !(v.is_finite() && v >= T::zero() && v <= channel_max) {
                return Err(Error::OutOfRange {
                    what: name,
                    value: v.as_f64(),
                    lo: 0.0,
                    hi: channel_max.as_f64(),
                });
            }
        }
        Ok(d)
    }

    pub fn channels(&self) -> [T; 4] {
        [self.x_plus, self.x_minus, self.y_plus, self.y_minus]
    }

    /// Per-axis differential voltage (plus − minus).
    pub fn differential(&self) -> [T; 2] {
        [self.x_plus - self.x_minus, self.y_plus - self.y_minus]
    }
}

/// A closed disc in voltage space where the mirror cannot hold position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstabilityRegion<T> {
    pub center: VoltageCoord<T>,
    pub radius: T,
    /// Length of the oscillation path on the device plane, metres.
    pub path_length_m: T,
    /// Direction of the oscillation path in the device plane, radians from +u.
    pub axis_angle: T,
}

impl<T: Real> InstabilityRegion<T> {
    pub fn contains(&self, v: &VoltageCoord<T>) -> bool {
        self.center.distance(v) <= self.radius
    }
}

/// Electrical parameters of the drive chain. All quantities in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectricalConfig<T> {
    pub driver_capacitance_limit: T,
    pub mirror_capacitance: T,
    pub cable_capacitance: T,
    pub resting_power: T,
    /// Normalized units per second, applied per axis.
    pub max_slew: T,
    pub common_mode_sum: T,
    pub channel_max: T,
    /// Mechanical tilt reached at `v = ±1`, per axis (radians).
    pub theta_max: [T; 2],
    /// Saturation gain κ₀ per unit excess-capacitance ratio, per axis.
    pub saturation_gain: [T; 2],
    pub instability_regions: Vec<InstabilityRegion<T>>,
}

impl<T: Real> Default for ElectricalConfig<T> {
    fn default() -> Self {
        Self {
            driver_capacitance_limit: T::lit(50e-12),
            mirror_capacitance: T::lit(20e-12),
            cable_capacitance: T::lit(30e-12),
            resting_power: T::lit(0.99e-6),
            max_slew: T::lit(5.0),
            common_mode_sum: T::lit(180.0),
            channel_max: T::lit(180.0),
            theta_max: [
                T::lit(DEFAULT_THETA_MAX_RAD[0]),
                T::lit(DEFAULT_THETA_MAX_RAD[1]),
            ],
            saturation_gain: [T::one(), T::one()],
            instability_regions: Vec::new(),
        }
    }
}

/// Tilt range that makes the default folded layout trace a 30 mm × 30 mm
/// field at the 150 mm focal plane (root-found against the two-bounce trace).
pub const DEFAULT_THETA_MAX_RAD: [f64; 2] = [0.057_204_854_324_610_53, 0.057_093_241_329_134_64];

/// Default oscillation path length reported for unstable coordinates.
pub const DEFAULT_OSCILLATION_LENGTH_M: f64 = 500e-6;

impl<T: Real> ElectricalConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: T| {
            if v.is_finite() && v > T::zero() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be > 0, got {v}")))
            }
        };
        pos("driver_capacitance_limit", self.driver_capacitance_limit)?;
        pos("mirror_capacitance", self.mirror_capacitance)?;
        pos("cable_capacitance", self.cable_capacitance)?;
        pos("max_slew", self.max_slew)?;
        pos("common_mode_sum", self.common_mode_sum)?;
        pos("channel_max", self.channel_max)?;
        if !(self.resting_power.is_finite() && self.resting_power >= T::zero()) {
            return Err(Error::invalid("resting_power", "must be >= 0"));
        }
        if self.common_mode_sum > self.channel_max {
            return Err(Error::invalid(
                "common_mode_sum",
                "exceeds channel_max; full-scale commands would clip",
            ));
        }
        for (axis, (&t, &k)) in self.theta_max.iter().zip(&self.saturation_gain).enumerate() {
            if !(t.is_finite() && t > T::zero() && t <= T::FRAC_PI_4()) {
                return Err(Error::invalid(
                    format!("theta_max[{axis}]"),
                    "must be in (0, pi/4]",
                ));
            }
            if !(k.is_finite() && k >= T::zero()) {
                return Err(Error::invalid(
                    format!("saturation_gain[{axis}]"),
                    "must be >= 0",
                ));
            }
        }
        for (i, r) in self.instability_regions.iter().enumerate() {
            if !(r.radius.is_finite() && r.radius >= T::zero()) {
                return Err(Error::invalid(
                    format!("instability_regions[{i}].radius"),
                    "must be >= 0",
                ));
            }
            if !(r.path_length_m.is_finite() && r.path_length_m > T::zero()) {
                return Err(Error::invalid(
                    format!("instability_regions[{i}].path_length"),
                    "must be > 0",
                ));
            }
        }
        Ok(())
    }

    /// Cable capacitance beyond the driver budget, relative to the mirror
    /// capacitance. Zero while the budget is respected.
    pub fn excess_capacitance_ratio(&self) -> T {
        let budget = self.driver_capacitance_limit - self.mirror_capacitance;
        ((self.cable_capacitance - budget) / self.mirror_capacitance).max(T::zero())
    }

    /// Effective saturation gain κ per axis.
    pub fn kappa(&self) -> [T; 2] {
        let r = self.excess_capacitance_ratio();
        [self.saturation_gain[0] * r, self.saturation_gain[1] * r]
    }
}

/// Normalized saturation law `tanh(κ v) / tanh(κ)`; the identity at κ = 0.
pub fn saturation<T: Real>(v: T, kappa: T) -> T {
    let k = kappa.abs();
    if k < T::lit(1e-4) {
        // Series in κ; the O(κ⁴) remainder is below f64 resolution here.
        let third = T::lit(1.0 / 3.0);
        v * (T::one() + k * k * (T::one() - v * v) * third)
    } else {
        (k * v).tanh() / k.tanh()
    }
}

/// Derivative of [`saturation`] with respect to `v`.
pub fn saturation_slope<T: Real>(v: T, kappa: T) -> T {
    let k = kappa.abs();
    if k < T::lit(1e-4) {
        let third = T::lit(1.0 / 3.0);
        T::one() + k * k * (T::one() - T::lit(3.0) * v * v) * third
    } else {
        let c = (k * v).cosh();
        k / (k.tanh() * c * c)
    }
}

/// Inverse of [`saturation`] on `[-1, 1]`.
pub fn saturation_inverse<T: Real>(g: T, kappa: T) -> T {
    let k = kappa.abs();
    if k < T::lit(1e-4) {
        // One Newton correction on the series form.
        let mut v = g;
        for _ in 0..3 {
            v = v - (saturation(v, k) - g) / saturation_slope(v, k);
        }
        v
    } else {
        (g * k.tanh()).atanh() / k
    }
}

/// Mechanical tilt of the mirror about its two axes, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MirrorPose<T> {
    pub tilt_x: T,
    pub tilt_y: T,
}

impl<T: Real> MirrorPose<T> {
    pub fn new(tilt_x: T, tilt_y: T) -> Self {
        Self { tilt_x, tilt_y }
    }

    pub fn rest() -> Self {
        Self::new(T::zero(), T::zero())
    }
}

/// Symmetric differential drive: `plus = S/2·(1 + v)`, `minus = S/2·(1 − v)`.
pub fn normalized_to_drive<T: Real>(v: &VoltageCoord<T>, cfg: &ElectricalConfig<T>) -> Result<DriveVoltages<T>> {
    check_unit("vx", v.vx)?;
    check_unit("vy", v.vy)?;
    let half = cfg.common_mode_sum * T::lit(0.5);
    let one = T::one();
    DriveVoltages::new(
        half * (one + v.vx),
        half * (one - v.vx),
        half * (one + v.vy),
        half * (one - v.vy),
        cfg.channel_max,
    )
}

/// Normalized differential per axis, clamped into `[-1, 1]`.
pub fn drive_to_normalized<T: Real>(d: &DriveVoltages<T>, cfg: &ElectricalConfig<T>) -> VoltageCoord<T> {
    let [dx, dy] = d.differential();
    VoltageCoord::clamped(dx / cfg.common_mode_sum, dy / cfg.common_mode_sum)
}

pub fn drive_to_tilt<T: Real>(d: &DriveVoltages<T>, cfg: &ElectricalConfig<T>) -> MirrorPose<T> {
    coord_to_tilt(&drive_to_normalized(d, cfg), cfg)
}

/// `normalized_to_drive ∘ drive_to_tilt` without materializing the voltages.
pub fn coord_to_tilt<T: Real>(v: &VoltageCoord<T>, cfg: &ElectricalConfig<T>) -> MirrorPose<T> {
    let [kx, ky] = cfg.kappa();
    MirrorPose {
        tilt_x: cfg.theta_max[0] * saturation(v.vx, kx),
        tilt_y: cfg.theta_max[1] * saturation(v.vy, ky),
    }
}

/// Oscillation observed at an unstable coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Oscillation<T> {
    pub region: usize,
    pub path_length_m: T,
    pub axis_angle: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Stability<T> {
    Stable,
    Unstable(Oscillation<T>),
}

impl<T> Stability<T> {
    pub fn is_stable(&self) -> bool {
        matches!(self, Stability::Stable)
    }
}

/// Regions are closed: a coordinate exactly on the boundary is unstable.
pub fn check_stability<T: Real>(v: &VoltageCoord<T>, cfg: &ElectricalConfig<T>) -> Stability<T> {
    cfg.instability_regions
        .iter()
        .enumerate()
        .find(|(_, r)| r.contains(v))
        .map_or(Stability::Stable, |(region, r)| {
            Stability::Unstable(Oscillation {
                region,
                path_length_m: r.path_length_m,
                axis_angle: r.axis_angle,
            })
        })
}

/// `½ C ΔV²` summed over the four channels.
pub fn switching_energy<T: Real>(from: &DriveVoltages<T>, to: &DriveVoltages<T>, capacitance: T) -> T {
    let half = T::lit(0.5);
    from.channels()
        .iter()
        .zip(to.channels())
        .fold(T::zero(), |acc, (&a, b)| {
            let dv = b - a;
            acc + half * capacitance * dv * dv
        })
}

/// Controller-side state of the mirror over a session.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MirrorState<T> {
    pub commanded: VoltageCoord<T>,
    pub drive: DriveVoltages<T>,
    pub pose: MirrorPose<T>,
    pub moving: bool,
    /// Joules; never decreases.
    pub energy_dissipated: T,
    /// Simulated session clock, seconds.
    pub clock: T,
    /// `(clock, energy)` after every step, starting at `(0, 0)`.
    #[serde(skip)]
    history: Vec<(T, T)>,
}

impl<T: Real> MirrorState<T> {
    /// Mirror biased at rest at the start of a session.
    pub fn new(cfg: &ElectricalConfig<T>) -> Self {
        let commanded = VoltageCoord::origin();
        let drive = normalized_to_drive(&commanded, cfg).expect("origin is always in range");
        Self {
            commanded,
            drive,
            pose: coord_to_tilt(&commanded, cfg),
            moving: false,
            energy_dissipated: T::zero(),
            clock: T::zero(),
            history: vec![(T::zero(), T::zero())],
        }
    }

    /// Slews towards `target` for `dt` seconds. See [`step_mirror`].
    pub fn step(
        &mut self,
        target: &VoltageCoord<T>,
        dt: T,
        cfg: &ElectricalConfig<T>,
        allow_unstable: bool,
    ) -> Result<()> {
        if !(dt.is_finite() && dt > T::zero()) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        if !allow_unstable {
            if let Stability::Unstable(o) = check_stability(target, cfg) {
                return Err(Error::Interlock {
                    vx: target.vx.as_f64(),
                    vy: target.vy.as_f64(),
                    region: o.region,
                });
            }
        }
        let reach = cfg.max_slew * dt;
        let advance = |cur: T, tgt: T| {
            let delta = tgt - cur;
            // Snap when the remaining distance is within rounding of the reach.
            if delta.abs() <= reach * (T::one() + T::lit(1e-12)) {
                tgt
            } else {
                cur + reach * delta.signum()
            }
        };
        let next = VoltageCoord {
            vx: advance(self.commanded.vx, target.vx),
            vy: advance(self.commanded.vy, target.vy),
        };
        let drive = normalized_to_drive(&next, cfg)?;
        self.moving = next != self.commanded;
        self.commanded = next;
        self.apply(drive, dt, cfg);
        Ok(())
    }

    /// Applies raw channel voltages for `dt` seconds, bypassing the normalized
    /// map and slew limiter. Used for per-channel power characterization.
    pub fn step_channels(
        &mut self,
        drive: DriveVoltages<T>,
        dt: T,
        cfg: &ElectricalConfig<T>,
    ) -> Result<()> {
        if !(dt.is_finite() && dt > T::zero()) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        let drive = DriveVoltages::new(
            drive.x_plus,
            drive.x_minus,
            drive.y_plus,
            drive.y_minus,
            cfg.channel_max,
        )?;
        let next = drive_to_normalized(&drive, cfg);
        self.moving = drive != self.drive;
        self.commanded = next;
        self.apply(drive, dt, cfg);
        Ok(())
    }

    fn apply(&mut self, drive: DriveVoltages<T>, dt: T, cfg: &ElectricalConfig<T>) {
        let switching = switching_energy(&self.drive, &drive, cfg.mirror_capacitance);
        self.drive = drive;
        self.pose = drive_to_tilt(&drive, cfg);
        self.energy_dissipated = self.energy_dissipated + switching + cfg.resting_power * dt;
        self.clock = self.clock + dt;
        self.history.push((self.clock, self.energy_dissipated));
    }

    /// Energy dissipated up to time `t`, interpolated linearly within steps.
    pub fn energy_at(&self, t: T) -> T {
        let idx = self.history.partition_point(|&(c, _)| c < t);
        if idx == 0 {
            return self.history[0].1;
        }
        if idx >= self.history.len() {
            return self.energy_dissipated;
        }
        let (t0, e0) = self.history[idx - 1];
        let (t1, e1) = self.history[idx];
        if t1 <= t0 {
            return e1;
        }
        e0 + (e1 - e0) * (t - t0) / (t1 - t0)
    }
}

/// Functional form of [`MirrorState::step`].
///
/// The commanded coordinate moves towards `target` by at most
/// `max_slew · dt` per axis. Energy grows by `resting_power · dt` plus the
/// capacitor switching energy of the channel transitions in this step.
/// Targets inside an instability region are refused unless
/// `allow_unstable` is set.
pub fn step_mirror<T: Real>(
    mut state: MirrorState<T>,
    target: &VoltageCoord<T>,
    dt: T,
    cfg: &ElectricalConfig<T>,
    allow_unstable: bool,
) -> Result<MirrorState<T>> {
    state.step(target, dt, cfg, allow_unstable)?;
    Ok(state)
}

/// Average dissipated power over the trailing `window` seconds.
pub fn power_report<T: Real>(state: &MirrorState<T>, window: T) -> Result<T> {
    if !(window.is_finite() && window > T::zero() && window <= state.clock * (T::one() + T::lit(1e-12))) {
        return Err(Error::EmptyWindow {
            window: window.as_f64(),
            elapsed: state.clock.as_f64(),
        });
    }
    let start = (state.clock - window).max(T::zero());
    Ok((state.energy_dissipated - state.energy_at(start)) / window)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ElectricalConfig<f64> {
        ElectricalConfig::default()
    }

    fn v(x: f64, y: f64) -> VoltageCoord<f64> {
        VoltageCoord::new(x, y).unwrap()
    }

    #[test]
    fn drive_examples() {
        let c = cfg();
        let d = normalized_to_drive(&v(0.0, 0.0), &c).unwrap();
        assert_eq!(d.channels(), [90.0, 90.0, 90.0, 90.0]);
        let d = normalized_to_drive(&v(1.0, 0.0), &c).unwrap();
        assert_eq!(d.channels(), [180.0, 0.0, 90.0, 90.0]);
        let d = normalized_to_drive(&v(-0.5, 0.5), &c).unwrap();
        assert_eq!(d.channels(), [45.0, 135.0, 135.0, 45.0]);
    }

    #[test]
    fn out_of_range_coordinate_rejected() {
        assert!(VoltageCoord::new(1.0 + 1e-12, 0.0).is_err());
        assert!(VoltageCoord::new(0.0, f64::NAN).is_err());
        let bad = VoltageCoord { vx: 1.5, vy: 0.0 };
        assert!(normalized_to_drive(&bad, &cfg()).is_err());
    }

    #[test]
    fn budget_cable_is_linear() {
        let mut c = cfg();
        c.cable_capacitance = 30e-12;
        assert_eq!(c.excess_capacitance_ratio(), 0.0);
        for &x in &[-1.0, -0.3, 0.0, 0.42, 1.0] {
            let p = coord_to_tilt(&v(x, 0.0), &c);
            assert!((p.tilt_x / c.theta_max[0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_command_zero_tilt() {
        let mut c = cfg();
        c.cable_capacitance = 90e-12;
        let d = normalized_to_drive(&v(0.0, 0.0), &c).unwrap();
        assert_eq!(drive_to_tilt(&d, &c), MirrorPose::rest());
    }

    #[test]
    fn high_capacitance_compresses_edges() {
        let mut c = cfg();
        c.cable_capacitance = 90e-12;
        c.saturation_gain = [1.0, 1.0];
        let k = c.kappa()[0];
        assert!((k - 3.0).abs() < 1e-12);
        // Central finite differences, independent of the analytic slope.
        let h = 1e-6;
        let fd = |x: f64| (saturation(x + h, k) - saturation(x - h, k)) / (2.0 * h);
        assert!(fd(0.0) / fd(0.9) > 1.0);
        assert!((fd(0.3) - saturation_slope(0.3, k)).abs() < 1e-6);
    }

    #[test]
    fn stability_regions_are_closed() {
        let mut c = cfg();
        assert!(check_stability(&v(0.2, 0.1), &c).is_stable());
        c.instability_regions.push(InstabilityRegion {
            center: v(0.5, 0.5),
            radius: 0.25,
            path_length_m: DEFAULT_OSCILLATION_LENGTH_M,
            axis_angle: 0.0,
        });
        match check_stability(&v(0.55, 0.5), &c) {
            Stability::Unstable(o) => assert_eq!(o.path_length_m, 500e-6),
            Stability::Stable => panic!("inside region"),
        }
        assert!(!check_stability(&v(0.75, 0.5), &c).is_stable());
        assert!(check_stability(&v(0.76, 0.5), &c).is_stable());
    }

    #[test]
    fn interlock_and_override() {
        let mut c = cfg();
        c.instability_regions.push(InstabilityRegion {
            center: v(0.5, 0.5),
            radius: 0.1,
            path_length_m: 500e-6,
            axis_angle: 0.0,
        });
        let s = MirrorState::new(&c);
        let err = step_mirror(s.clone(), &v(0.5, 0.5), 1.0, &c, false).unwrap_err();
        assert!(matches!(err, Error::Interlock { region: 0, .. }));
        let s = step_mirror(s, &v(0.5, 0.5), 1.0, &c, true).unwrap();
        assert_eq!(s.commanded, v(0.5, 0.5));
    }

    #[test]
    fn idle_second_costs_resting_energy() {
        let c = cfg();
        let s = MirrorState::new(&c);
        let s = step_mirror(s, &v(0.0, 0.0), 1.0, &c, false).unwrap();
        assert!((s.energy_dissipated - 0.99e-6).abs() < 1e-18);
        assert!(!s.moving);
    }

    #[test]
    fn full_scale_channel_transition_energy() {
        let c = cfg();
        let a = DriveVoltages::new(0.0, 0.0, 0.0, 0.0, 180.0).unwrap();
        let b = DriveVoltages::new(180.0, 0.0, 0.0, 0.0, 180.0).unwrap();
        let e = switching_energy(&a, &b, c.mirror_capacitance);
        assert!((e - 0.324e-6).abs() < 1e-15);
    }

    #[test]
    fn slew_clamp() {
        let mut c = cfg();
        c.max_slew = 0.1;
        let s = MirrorState::new(&c);
        let s = step_mirror(s, &v(0.5, 0.0), 1.0, &c, false).unwrap();
        assert!((s.commanded.vx - 0.1).abs() < 1e-15);
        assert!(s.moving);
    }

    #[test]
    fn power_report_examples() {
        let mut c = cfg();
        let mut s = MirrorState::new(&c);
        for _ in 0..10 {
            s.step(&v(0.0, 0.0), 1.0, &c, false).unwrap();
        }
        assert!((power_report(&s, 10.0).unwrap() - 0.99e-6).abs() < 1e-15);
        assert!(power_report(&s, 0.0).is_err());
        assert!(power_report(&s, 11.0).is_err());

        c.resting_power = 0.0;
        let mut s = MirrorState::new(&c);
        s.step(&v(0.0, 0.0), 5.0, &c, false).unwrap();
        assert_eq!(power_report(&s, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn toggling_one_channel_adds_switching_power() {
        let c = cfg();
        let mut s = MirrorState::new(&c);
        let lo = DriveVoltages::new(0.0, 90.0, 90.0, 90.0, 180.0).unwrap();
        let hi = DriveVoltages::new(180.0, 90.0, 90.0, 90.0, 180.0).unwrap();
        s.step_channels(lo, 1.0, &c).unwrap();
        for i in 0..20 {
            s.step_channels(if i % 2 == 0 { hi } else { lo }, 1.0, &c).unwrap();
        }
        let p = power_report(&s, 20.0).unwrap();
        assert!((p - (0.99e-6 + 0.324e-6)).abs() < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let c = ElectricalConfig::<f32>::default();
        let d = normalized_to_drive(&VoltageCoord::new(0.25f32, -0.75).unwrap(), &c).unwrap();
        assert_eq!(d.channels(), [112.5, 67.5, 22.5, 157.5]);
        let p = drive_to_tilt(&d, &c);
        assert!((p.tilt_x / c.theta_max[0] - 0.25).abs() < 1e-6);
    }
}
