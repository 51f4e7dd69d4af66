//! Device under test: mask plate, MKID transmission response, stray-light
//! background and thermal relaxation.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{aperture_power, rect_power, BeamSpot};
use crate::scalar::Real;
use crate::steering::VoltageCoord;
use crate::vector::Vec2;

/// Axis-aligned device-plane rectangle, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect<T> {
    pub min: Vec2<T>,
    pub max: Vec2<T>,
}

impl<T: Real> Rect<T> {
    pub fn new(min: Vec2<T>, max: Vec2<T>) -> Result<Self> {
        if !(min.x < max.x && min.y < max.y) {
            return Err(Error::invalid("active_region", "min must be below max on both axes"));
        }
        Ok(Self { min, max })
    }

    pub fn contains_disc(&self, c: Vec2<T>, r: T) -> bool {
        c.x - r >= self.min.x && c.x + r <= self.max.x && c.y - r >= self.min.y && c.y + r <= self.max.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hole<T> {
    pub center: Vec2<T>,
    pub radius: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Open,
    Screen,
}

/// Plate in front of the chip. An open plate exposes the whole active region;
/// a screen plate only passes light through its holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPattern<T> {
    pub kind: MaskKind,
    pub holes: Vec<Hole<T>>,
    pub active: Rect<T>,
}

impl<T: Real> MaskPattern<T> {
    pub fn open(active: Rect<T>) -> Self {
        Self {
            kind: MaskKind::Open,
            holes: Vec::new(),
            active,
        }
    }

    pub fn screen(holes: Vec<Hole<T>>, active: Rect<T>) -> Result<Self> {
        let m = Self {
            kind: MaskKind::Screen,
            holes,
            active,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            MaskKind::Open if !self.holes.is_empty() => {
                return Err(Error::invalid("mask.holes", "an open plate has no holes"))
            }
            MaskKind::Screen if self.holes.is_empty() => {
                return Err(Error::invalid("mask.holes", "a screen plate needs at least one hole"))
            }
            _ => {}
        }
        for (i, h) in self.holes.iter().enumerate() {
            if !(h.radius.is_finite() && h.radius > T::zero()) {
                return Err(Error::invalid(format!("mask.holes[{i}].radius"), "must be > 0"));
            }
            if !self.active.contains_disc(h.center, h.radius) {
                return Err(Error::invalid(
                    format!("mask.holes[{i}]"),
                    "lies outside the active region",
                ));
            }
            for (j, o) in self.holes.iter().enumerate().skip(i + 1) {
                if h.center.distance(o.center) < h.radius + o.radius {
                    return Err(Error::invalid(
                        format!("mask.holes[{i}]"),
                        format!("overlaps hole {j}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Power split of a spot by the mask: `(through, blocked)`.
pub fn masked_power<T: Real>(spot: &BeamSpot<T>, mask: &MaskPattern<T>) -> (T, T) {
    let through = match mask.kind {
        MaskKind::Open => rect_power(spot, mask.active.min, mask.active.max),
        MaskKind::Screen => mask
            .holes
            .iter()
            .fold(T::zero(), |acc, h| acc + aperture_power(spot, h.center, h.radius)),
    };
    let through = through.min(spot.total_power);
    (through, spot.total_power - through)
}

/// Single-resonator notch model with linear optical responsivities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MkidParams<T> {
    pub f0_hz: T,
    pub qi: T,
    pub qc: T,
    pub readout_freq_hz: T,
    /// Resonance shift per absorbed watt (negative).
    pub freq_responsivity_hz_per_w: T,
    /// Increase of internal loss `1/Qi` per absorbed watt.
    pub q_responsivity_per_w: T,
    pub relax_tau_s: T,
}

impl<T: Real> Default for MkidParams<T> {
    fn default() -> Self {
        Self {
            f0_hz: T::lit(4.0e9),
            qi: T::lit(3.0e5),
            qc: T::lit(2.0e5),
            readout_freq_hz: T::lit(4.0e9),
            freq_responsivity_hz_per_w: T::lit(-2.0e13),
            q_responsivity_per_w: T::lit(2.0e3),
            relax_tau_s: T::lit(4.0),
        }
    }
}

/// Half-width of the frequency window where the model is used, in linewidths.
pub const VALIDITY_LINEWIDTHS: f64 = 10.0;

impl<T: Real> MkidParams<T> {
    pub fn loaded_q(&self) -> T {
        T::one() / (T::one() / self.qi + T::one() / self.qc)
    }

    pub fn linewidth_hz(&self) -> T {
        self.f0_hz / self.loaded_q()
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: T| {
            if v.is_finite() && v > T::zero() {
                Ok(())
            } else {
                Err(Error::invalid(format!("mkid.{name}"), "must be > 0"))
            }
        };
        pos("f0_hz", self.f0_hz)?;
        pos("qi", self.qi)?;
        pos("qc", self.qc)?;
        pos("relax_tau_s", self.relax_tau_s)?;
        if !(self.freq_responsivity_hz_per_w < T::zero()) {
            return Err(Error::invalid(
                "mkid.freq_responsivity_hz_per_w",
                "must be negative (resonance shifts down under load)",
            ));
        }
        if !(self.q_responsivity_per_w >= T::zero()) {
            return Err(Error::invalid("mkid.q_responsivity_per_w", "must be >= 0"));
        }
        self.check_window(self.readout_freq_hz)
            .map_err(|_| Error::invalid("mkid.readout_freq_hz", "outside the model validity window"))
    }

    fn check_window(&self, f: T) -> Result<()> {
        let half = T::lit(VALIDITY_LINEWIDTHS) * self.linewidth_hz();
        if f.is_finite() && (f - self.f0_hz).abs() <= half {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                what: "readout frequency",
                value: f.as_f64(),
                lo: (self.f0_hz - half).as_f64(),
                hi: (self.f0_hz + half).as_f64(),
            })
        }
    }
}

/// `|S21|` of the loaded notch at frequency `f` with `absorbed` watts on the chip.
pub fn s21_magnitude<T: Real>(f: T, p: &MkidParams<T>, absorbed: T) -> Result<T> {
    p.check_window(f)?;
    let one = T::one();
    let fr = p.f0_hz + p.freq_responsivity_hz_per_w * absorbed;
    let inv_qi = one / p.qi + p.q_responsivity_per_w * absorbed;
    let ql = one / (inv_qi + one / p.qc);
    let x = (f - fr) / fr;
    let denom = Complex::new(one, T::lit(2.0) * ql * x);
    let s21 = Complex::new(one, T::zero()) - Complex::new(ql / p.qc, T::zero()) / denom;
    Ok(s21.norm().min(one))
}

/// Change of `|S21|` at the readout tone caused by `absorbed` watts.
pub fn delta_s21<T: Real>(p: &MkidParams<T>, absorbed: T) -> Result<T> {
    if !(absorbed >= T::zero()) {
        return Err(Error::invalid("absorbed", "must be >= 0"));
    }
    Ok(s21_magnitude(p.readout_freq_hz, p, absorbed)? - s21_magnitude(p.readout_freq_hz, p, T::zero())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviceState<T> {
    /// Optical load still held by the chip, W.
    pub absorbed_power: T,
    pub time: T,
    pub baseline_s21: T,
}

pub fn thermal_relax<T: Real>(state: &DeviceState<T>, dt: T, p: &MkidParams<T>) -> DeviceState<T> {
    let dt = dt.max(T::zero());
    DeviceState {
        absorbed_power: state.absorbed_power * (-dt / p.relax_tau_s).exp(),
        time: state.time + dt,
        baseline_s21: state.baseline_s21,
    }
}

/// Stray light reaching the resonator from power blocked by the plate.
///
/// The coupling field is a quadratic in voltage coordinates clamped into
/// `[0, 1]`; coefficients are `[1, vx, vy, vx², vx·vy, vy²]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundModel<T> {
    pub coupling: [T; 6],
    pub scale: T,
}

impl<T: Real> Default for BackgroundModel<T> {
    fn default() -> Self {
        Self {
            coupling: [T::zero(); 6],
            scale: T::zero(),
        }
    }
}

impl<T: Real> BackgroundModel<T> {
    pub fn coupling_at(&self, v: &VoltageCoord<T>) -> T {
        let c = &self.coupling;
        let (x, y) = (v.vx, v.vy);
        let raw = c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y;
        raw.max(T::zero()).min(T::one())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale >= T::zero()) {
            return Err(Error::invalid("background.scale", "must be >= 0"));
        }
        if self.coupling.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("background.coupling", "coefficients must be finite"));
        }
        Ok(())
    }
}

pub fn background_power<T: Real>(blocked: T, v: &VoltageCoord<T>, bg: &BackgroundModel<T>) -> Result<T> {
    if !(blocked >= T::zero()) {
        return Err(Error::invalid("blocked", "must be >= 0"));
    }
    Ok(bg.scale * bg.coupling_at(v) * blocked)
}
