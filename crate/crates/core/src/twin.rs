//! The simulated instrument: drive chain, optics, mask and resonator wired
//! together behind the same commands a hardware backend would take.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::device::{
    background_power, masked_power, s21_magnitude, thermal_relax, BackgroundModel, DeviceState, MaskPattern,
    MkidParams,
};
use crate::error::{Error, Result};
use crate::optics::{check_band, spot_profile, trace_to_device, OpticalLayout, SpotModelConfig};
use crate::steering::{check_stability, coord_to_tilt, ElectricalConfig, MirrorState, Stability};
use crate::vector::Vec2;
use crate::VoltageCoord;

/// Acquisition timing and readout noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Acquisition {
    /// Minimum wait after the mirror stops before reading, s.
    pub settle_s: f64,
    /// Relative (multiplicative) Gaussian noise on every |S21| reading.
    pub noise_rel: f64,
}

impl Default for Acquisition {
    fn default() -> Self {
        Self {
            settle_s: 0.1,
            noise_rel: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SourceState {
    pub on: bool,
    pub wavelength_nm: f64,
    pub power_w: f64,
}

/// Static parameters of the simulated stack.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwinParams {
    pub electrical: ElectricalConfig<f64>,
    pub layout: OpticalLayout<f64>,
    pub spot: SpotModelConfig<f64>,
    pub mkid: MkidParams<f64>,
    pub mask: MaskPattern<f64>,
    pub background: BackgroundModel<f64>,
    pub acquisition: Acquisition,
}

/// What the optics deliver to the chip for one command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Illumination {
    /// Landing point, `None` when the beam misses the device plane.
    pub position: Option<Vec2<f64>>,
    pub through_w: f64,
    pub blocked_w: f64,
    /// Power the resonator sees: through-mask light plus stray background.
    pub absorbed_w: f64,
}

impl TwinParams {
    pub fn validate(&self) -> Result<()> {
        self.electrical.validate()?;
        self.layout.validate()?;
        self.spot.validate()?;
        self.mkid.validate()?;
        self.mask.validate()?;
        self.background.validate()?;
        if !(self.acquisition.settle_s >= 0.0 && self.acquisition.noise_rel >= 0.0) {
            return Err(Error::invalid("acquisition", "times and noise must be >= 0"));
        }
        Ok(())
    }

    pub fn position(&self, v: &VoltageCoord) -> Result<Vec2<f64>> {
        trace_to_device(&coord_to_tilt(v, &self.electrical), &self.layout)
    }

    /// Deterministic optical response at `v` for a source of the given power.
    pub fn illumination(&self, v: &VoltageCoord, wavelength_nm: f64, power_w: f64) -> Result<Illumination> {
        check_band(wavelength_nm)?;
        let (position, through, blocked) = match self.position(v) {
            Ok(p) => {
                let spot = spot_profile(p, wavelength_nm, &self.spot, power_w)?;
                let (t, b) = masked_power(&spot, &self.mask);
                (Some(p), t, b)
            }
            Err(Error::Miss { .. }) => (None, 0.0, power_w),
            Err(e) => return Err(e),
        };
        let absorbed = through + background_power(blocked, v, &self.background)?;
        Ok(Illumination {
            position,
            through_w: through,
            blocked_w: blocked,
            absorbed_w: absorbed,
        })
    }
}

/// The running twin: static parameters plus mirror, chip and source state.
#[derive(Debug, Clone)]
pub struct Twin {
    params: TwinParams,
    mirror: MirrorState<f64>,
    device: DeviceState<f64>,
    source: SourceState,
    rng: ChaCha8Rng,
    seed: u64,
}

impl Twin {
    pub fn new(params: TwinParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mirror = MirrorState::new(&params.electrical);
        let baseline = s21_magnitude(params.mkid.readout_freq_hz, &params.mkid, 0.0)?;
        Ok(Self {
            mirror,
            device: DeviceState {
                absorbed_power: 0.0,
                time: 0.0,
                baseline_s21: baseline,
            },
            source: SourceState {
                on: false,
                wavelength_nm: params.spot.design_wavelength_nm,
                power_w: 0.0,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            params,
        })
    }

    pub fn params(&self) -> &TwinParams {
        &self.params
    }

    pub fn mirror(&self) -> &MirrorState<f64> {
        &self.mirror
    }

    pub fn device(&self) -> &DeviceState<f64> {
        &self.device
    }

    pub fn source(&self) -> SourceState {
        self.source
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clock(&self) -> f64 {
        self.mirror.clock
    }

    /// Restarts the noise stream.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn stability(&self, v: &VoltageCoord) -> Stability<f64> {
        check_stability(v, &self.params.electrical)
    }

    /// Idles for `dt` seconds: mirror holds, chip relaxes.
    pub fn wait(&mut self, dt: f64) -> Result<()> {
        if dt <= 0.0 {
            return Ok(());
        }
        let hold = self.mirror.commanded;
        self.mirror.step(&hold, dt, &self.params.electrical, true)?;
        self.device = thermal_relax(&self.device, dt, &self.params.mkid);
        Ok(())
    }

    /// Advances the clock with the source on. Residual load is held until the
    /// chip goes dark again, so an exposure never reads below its dark level.
    pub fn expose(&mut self, dt: f64) -> Result<()> {
        if dt <= 0.0 {
            return Ok(());
        }
        let hold = self.mirror.commanded;
        self.mirror.step(&hold, dt, &self.params.electrical, true)?;
        self.device.time += dt;
        Ok(())
    }

    /// Slews to `target` at the configured rate. Returns the slew time.
    pub fn slew_to(&mut self, target: &VoltageCoord, allow_unstable: bool) -> Result<f64> {
        if !allow_unstable {
            if let Stability::Unstable(o) = self.stability(target) {
                return Err(Error::Interlock {
                    vx: target.vx,
                    vy: target.vy,
                    region: o.region,
                });
            }
        }
        let dist = self.mirror.commanded.max_axis_distance(target);
        if dist == 0.0 {
            return Ok(0.0);
        }
        let dt = dist / self.params.electrical.max_slew;
        self.mirror.step(target, dt, &self.params.electrical, true)?;
        self.device = thermal_relax(&self.device, dt, &self.params.mkid);
        debug_assert_eq!(self.mirror.commanded, *target);
        Ok(dt)
    }

    pub fn set_source(&mut self, on: bool, wavelength_nm: f64, power_w: f64) -> Result<()> {
        check_band(wavelength_nm)?;
        if !(power_w.is_finite() && power_w >= 0.0) {
            return Err(Error::invalid("power_w", "must be >= 0"));
        }
        self.source = SourceState {
            on,
            wavelength_nm,
            power_w,
        };
        Ok(())
    }

    /// Optical load currently delivered by the source at the commanded point.
    pub fn current_illumination(&self) -> Result<Option<Illumination>> {
        if !self.source.on {
            return Ok(None);
        }
        self.params
            .illumination(&self.mirror.commanded, self.source.wavelength_nm, self.source.power_w)
            .map(Some)
    }

    /// Reads |S21| at the readout tone with `extra_w` on top of the residual load.
    pub fn read_s21(&mut self, extra_w: f64) -> Result<f64> {
        let mkid = &self.params.mkid;
        let clean = s21_magnitude(mkid.readout_freq_hz, mkid, self.device.absorbed_power + extra_w)?;
        let sigma = self.params.acquisition.noise_rel;
        if sigma == 0.0 {
            return Ok(clean);
        }
        let n: f64 = StandardNormal.sample(&mut self.rng);
        Ok(clean * (1.0 + sigma * n))
    }

    /// Leaves `load_w` on the chip as residual load (end of an exposure).
    pub fn deposit(&mut self, load_w: f64) {
        self.device.absorbed_power += load_w;
    }
}
