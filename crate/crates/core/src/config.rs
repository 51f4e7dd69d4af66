//! System configuration: strict TOML with unit-suffixed keys, named presets
//! (a scan plan plus section overrides) and a content hash for provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::device::{BackgroundModel, Hole, MaskKind, MaskPattern, MkidParams, Rect};
use crate::error::{Error, Result};
use crate::optics::{FoldedGeometry, OpticalLayout, SpotModelConfig};
use crate::scan::{plan_grid, plan_line, ScanPlan, SourceSetting, Timing, DEFAULT_RELAX_WAIT_S};
use crate::steering::{ElectricalConfig, InstabilityRegion};
use crate::twin::{Acquisition, Twin, TwinParams};
use crate::vector::Vec2;
use crate::VoltageCoord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElectricalSection {
    pub driver_capacitance_limit_pf: f64,
    pub mirror_capacitance_pf: f64,
    pub cable_capacitance_pf: f64,
    pub resting_power_uw: f64,
    /// Normalized units per second.
    pub max_slew_per_s: f64,
    pub common_mode_sum_v: f64,
    pub channel_max_v: f64,
    pub theta_max_deg: [f64; 2],
    pub saturation_gain: [f64; 2],
    pub instability: Vec<InstabilitySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstabilitySection {
    pub center: [f64; 2],
    pub radius: f64,
    #[serde(default = "default_osc_um")]
    pub path_length_um: f64,
    #[serde(default)]
    pub axis_angle_deg: f64,
}

fn default_osc_um() -> f64 {
    crate::steering::DEFAULT_OSCILLATION_LENGTH_M * 1e6
}

impl Default for ElectricalSection {
    fn default() -> Self {
        let e = ElectricalConfig::<f64>::default();
        Self {
            driver_capacitance_limit_pf: e.driver_capacitance_limit * 1e12,
            mirror_capacitance_pf: e.mirror_capacitance * 1e12,
            cable_capacitance_pf: e.cable_capacitance * 1e12,
            resting_power_uw: e.resting_power * 1e6,
            max_slew_per_s: e.max_slew,
            common_mode_sum_v: e.common_mode_sum,
            channel_max_v: e.channel_max,
            theta_max_deg: e.theta_max.map(f64::to_degrees),
            saturation_gain: e.saturation_gain,
            instability: Vec::new(),
        }
    }
}

impl ElectricalSection {
    fn build(&self) -> ElectricalConfig<f64> {
        ElectricalConfig {
            driver_capacitance_limit: self.driver_capacitance_limit_pf * 1e-12,
            mirror_capacitance: self.mirror_capacitance_pf * 1e-12,
            cable_capacitance: self.cable_capacitance_pf * 1e-12,
            resting_power: self.resting_power_uw * 1e-6,
            max_slew: self.max_slew_per_s,
            common_mode_sum: self.common_mode_sum_v,
            channel_max: self.channel_max_v,
            theta_max: self.theta_max_deg.map(f64::to_radians),
            saturation_gain: self.saturation_gain,
            instability_regions: self
                .instability
                .iter()
                .map(|r| InstabilityRegion {
                    center: VoltageCoord {
                        vx: r.center[0],
                        vy: r.center[1],
                    },
                    radius: r.radius,
                    path_length_m: r.path_length_um * 1e-6,
                    axis_angle: r.axis_angle_deg.to_radians(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSection {
    pub focal_length_mm: f64,
    pub focuser_to_mems_mm: f64,
    pub mems_to_fold_mm: f64,
    pub mems_incidence_deg: f64,
    pub fold_incidence_deg: f64,
    pub fold_aperture_radius_mm: f64,
    /// Half-width of the usable device plane (plate size), mm.
    pub device_half_size_mm: f64,
}

impl Default for LayoutSection {
    fn default() -> Self {
        let g = FoldedGeometry::<f64>::default();
        Self {
            focal_length_mm: g.focal_length_mm,
            focuser_to_mems_mm: g.focuser_to_mems_mm,
            mems_to_fold_mm: g.mems_to_fold_mm,
            mems_incidence_deg: g.mems_incidence.to_degrees(),
            fold_incidence_deg: g.fold_incidence.to_degrees(),
            fold_aperture_radius_mm: g.fold_aperture_radius_mm,
            device_half_size_mm: 25.0,
        }
    }
}

impl LayoutSection {
    fn build(&self) -> Result<OpticalLayout<f64>> {
        OpticalLayout::folded(&FoldedGeometry {
            focal_length_mm: self.focal_length_mm,
            focuser_to_mems_mm: self.focuser_to_mems_mm,
            mems_to_fold_mm: self.mems_to_fold_mm,
            mems_incidence: self.mems_incidence_deg.to_radians(),
            fold_incidence: self.fold_incidence_deg.to_radians(),
            fold_aperture_radius_mm: self.fold_aperture_radius_mm,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpotSection {
    pub design_wavelength_nm: f64,
    pub min_diameter_um: f64,
    pub chromatic_slope_um_per_nm: f64,
    pub ellipticity: f64,
    pub orientation_deg: f64,
}

impl Default for SpotSection {
    fn default() -> Self {
        let s = SpotModelConfig::<f64>::default();
        Self {
            design_wavelength_nm: s.design_wavelength_nm,
            min_diameter_um: s.min_diameter_um,
            chromatic_slope_um_per_nm: s.chromatic_slope_um_per_nm,
            ellipticity: s.ellipticity,
            orientation_deg: s.orientation.to_degrees(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MkidSection {
    pub f0_hz: f64,
    pub qi: f64,
    pub qc: f64,
    pub readout_freq_hz: f64,
    pub freq_responsivity_hz_per_w: f64,
    pub q_responsivity_per_w: f64,
    pub relax_tau_s: f64,
}

impl Default for MkidSection {
    fn default() -> Self {
        let m = MkidParams::<f64>::default();
        Self {
            f0_hz: m.f0_hz,
            qi: m.qi,
            qc: m.qc,
            readout_freq_hz: m.readout_freq_hz,
            freq_responsivity_hz_per_w: m.freq_responsivity_hz_per_w,
            q_responsivity_per_w: m.q_responsivity_per_w,
            relax_tau_s: m.relax_tau_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSection {
    pub kind: MaskKind,
    /// Hole list file (`x_mm y_mm radius_mm` per line), relative to the
    /// config file. Replaced by the loaded holes once resolved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Inline holes as `[x_mm, y_mm, radius_mm]`.
    #[serde(default)]
    pub holes: Vec<[f64; 3]>,
    /// `[x_min, y_min, x_max, y_max]`, mm.
    pub active_mm: [f64; 4],
}

impl Default for MaskSection {
    fn default() -> Self {
        Self {
            kind: MaskKind::Open,
            file: None,
            holes: Vec::new(),
            active_mm: [-15.0, -15.0, 15.0, 15.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundSection {
    /// `[1, vx, vy, vx², vx·vy, vy²]` coefficients of the coupling field.
    pub coupling: [f64; 6],
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSection {
    pub settle_s: f64,
    pub noise_rel: f64,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        let a = Acquisition::default();
        Self {
            settle_s: a.settle_s,
            noise_rel: a.noise_rel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub wavelength_nm: f64,
    pub power_w: f64,
}

impl Default for SourceSection {
    fn default() -> Self {
        Self {
            wavelength_nm: 950.0,
            power_w: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub vx_range: [f64; 2],
    pub vy_range: [f64; 2],
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<LineSpec>,
    #[serde(default = "default_dwell_on")]
    pub dwell_on_s: f64,
    #[serde(default)]
    pub dwell_off_s: f64,
    #[serde(default = "default_relax")]
    pub relax_wait_s: f64,
}

fn default_dwell_on() -> f64 {
    Timing::default().dwell_on
}

fn default_relax() -> f64 {
    DEFAULT_RELAX_WAIT_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetSection {
    #[serde(default)]
    pub description: String,
    pub plan: PlanSection,
    /// Partial config sections merged over the base before validation.
    #[serde(default)]
    pub overrides: toml::Table,
}

/// The config file as written.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub noise_seed: u64,
    pub electrical: ElectricalSection,
    pub layout: LayoutSection,
    pub spot: SpotSection,
    pub mkid: MkidSection,
    pub mask: MaskSection,
    pub background: BackgroundSection,
    pub acquisition: AcquisitionSection,
    pub source: SourceSection,
    pub presets: BTreeMap<String, PresetSection>,
}

fn cfg_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Deserializes with a dotted path to the offending key on failure.
fn parse_table<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| cfg_err("", e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        cfg_err(if path == "." { String::new() } else { path }, e.into_inner().message().to_string())
    })
}

/// Reads a hole list: one `x_mm y_mm radius_mm` row per line, `#` comments.
pub fn parse_hole_list(text: &str) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        let mut vals = [0.0; 3];
        let mut n = 0;
        let mut pos = 0;
        for tok in line.split_whitespace() {
            let col = raw[pos..].find(tok).map_or(1, |o| pos + o + 1);
            pos = col - 1 + tok.len();
            if n == 3 {
                return Err(Error::Parse {
                    line: i + 1,
                    column: col,
                    message: "expected 3 values: x_mm y_mm radius_mm".into(),
                });
            }
            vals[n] = tok.parse().map_err(|_| Error::Parse {
                line: i + 1,
                column: col,
                message: format!("`{tok}` is not a number"),
            })?;
            n += 1;
        }
        if n != 3 {
            return Err(Error::Parse {
                line: i + 1,
                column: raw.len() + 1,
                message: "expected 3 values: x_mm y_mm radius_mm".into(),
            });
        }
        out.push(vals);
    }
    Ok(out)
}

/// A validated, fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Resolved sections (mask file inlined, preset overrides applied).
    pub file: ConfigFile,
    pub params: TwinParams,
    pub source: SourceSetting,
    pub noise_seed: u64,
    /// Hex SHA-256 of the canonical resolved config.
    pub hash: String,
    base_dir: PathBuf,
}

impl SystemConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(path.display().to_string(), e.to_string()))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &dir)
    }

    /// Parses config text; relative mask files resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ConfigFile = parse_table(text)?;
        Self::resolve(file, base_dir)
    }

    /// Built-in defaults (open plate, no presets).
    pub fn defaults() -> Result<Self> {
        Self::resolve(ConfigFile::default(), Path::new("."))
    }

    fn resolve(mut file: ConfigFile, base_dir: &Path) -> Result<Self> {
        if let Some(rel) = file.mask.file.take() {
            if !file.mask.holes.is_empty() {
                return Err(cfg_err("mask", "give either `file` or `holes`, not both"));
            }
            let p = base_dir.join(&rel);
            let text = std::fs::read_to_string(&p).map_err(|e| cfg_err("mask.file", format!("{}: {e}", p.display())))?;
            file.mask.holes = parse_hole_list(&text).map_err(|e| cfg_err("mask.file", format!("{}: {e}", p.display())))?;
        }
        let params = build_params(&file)?;
        let source = SourceSetting {
            wavelength_nm: file.source.wavelength_nm,
            power_w: file.source.power_w,
        };
        crate::optics::check_band(source.wavelength_nm).map_err(|e| cfg_err("source.wavelength_nm", e.to_string()))?;
        if !(source.power_w.is_finite() && source.power_w >= 0.0) {
            return Err(cfg_err("source.power_w", "must be >= 0"));
        }
        for (name, p) in &file.presets {
            p.plan
                .build(source)
                .map_err(|e| cfg_err(format!("presets.{name}.plan"), e.to_string()))?;
        }
        let hash = canonical_hash(&file);
        Ok(Self {
            noise_seed: file.noise_seed,
            file,
            params,
            source,
            hash,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn preset_names(&self) -> impl Iterator<Item = &str> {
        self.file.presets.keys().map(String::as_str)
    }

    /// Config with the preset's overrides applied, and the preset's plan.
    pub fn preset(&self, name: &str) -> Result<(SystemConfig, ScanPlan)> {
        let preset = self
            .file
            .presets
            .get(name)
            .ok_or_else(|| cfg_err("presets", format!("unknown preset `{name}`")))?;
        let mut base = toml::Table::try_from(&self.file).map_err(|e| cfg_err("", e.to_string()))?;
        base.remove("presets");
        // A mask is one unit: an override replaces it rather than merging.
        if preset.overrides.contains_key("mask") {
            base.remove("mask");
        }
        merge(&mut base, &preset.overrides);
        // Re-parse to apply the same strict schema to the overrides.
        let text = toml::to_string(&base).map_err(|e| cfg_err("", e.to_string()))?;
        let resolved: ConfigFile = parse_table(&text).map_err(|e| match e {
            Error::Config { path, message } => cfg_err(format!("presets.{name}.overrides.{path}"), message),
            other => other,
        })?;
        let cfg = Self::resolve(resolved, &self.base_dir)?;
        let plan = preset.plan.build(cfg.source)?;
        Ok((cfg, plan))
    }

    pub fn twin(&self) -> Result<Twin> {
        Twin::new(self.params.clone(), self.noise_seed)
    }

    /// Session identifier derived from the config hash and seed.
    pub fn session_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.hash.as_bytes());
        h.update(self.noise_seed.to_le_bytes());
        hex::encode(&h.finalize()[..6])
    }

    /// Plans can be overridden per call; this is the configured source.
    pub fn source(&self) -> SourceSetting {
        self.source
    }
}

impl PlanSection {
    pub fn build(&self, source: SourceSetting) -> Result<ScanPlan> {
        let timing = Timing {
            dwell_on: self.dwell_on_s,
            dwell_off: self.dwell_off_s,
            relax_wait: self.relax_wait_s,
        };
        match (&self.grid, &self.line) {
            (Some(g), None) => plan_grid(g.vx_range, g.vy_range, g.nx, g.ny, timing, source),
            (None, Some(l)) => plan_line(
                VoltageCoord::new(l.start[0], l.start[1])?,
                VoltageCoord::new(l.end[0], l.end[1])?,
                l.n_points,
                timing,
                source,
            ),
            _ => Err(Error::invalid("plan", "exactly one of `grid` or `line` is required")),
        }
    }
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn canonical_hash(file: &ConfigFile) -> String {
    let mut f = file.clone();
    f.presets.clear();
    // serde_json writes struct fields in declaration order and floats in
    // shortest round-trip form, which makes this canonical.
    let json = serde_json::to_string(&f).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn section<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Invalid { field, reason } => {
            let field = field.strip_prefix(&format!("{name}.")).unwrap_or(&field).to_string();
            cfg_err(format!("{name}.{field}"), reason)
        }
        other => cfg_err(name, other.to_string()),
    })
}

fn build_params(f: &ConfigFile) -> Result<TwinParams> {
    let electrical = f.electrical.build();
    section("electrical", electrical.validate().map_err(|e| rename_electrical(e, &f.electrical)))?;
    let layout = section("layout", f.layout.build())?;
    if !(f.layout.device_half_size_mm.is_finite() && f.layout.device_half_size_mm > 0.0) {
        return Err(cfg_err("layout.device_half_size_mm", "must be > 0"));
    }
    let spot = SpotModelConfig {
        design_wavelength_nm: f.spot.design_wavelength_nm,
        min_diameter_um: f.spot.min_diameter_um,
        chromatic_slope_um_per_nm: f.spot.chromatic_slope_um_per_nm,
        ellipticity: f.spot.ellipticity,
        orientation: f.spot.orientation_deg.to_radians(),
    };
    section("spot", spot.validate())?;
    let m = &f.mkid;
    let mkid = MkidParams {
        f0_hz: m.f0_hz,
        qi: m.qi,
        qc: m.qc,
        readout_freq_hz: m.readout_freq_hz,
        freq_responsivity_hz_per_w: m.freq_responsivity_hz_per_w,
        q_responsivity_per_w: m.q_responsivity_per_w,
        relax_tau_s: m.relax_tau_s,
    };
    section("mkid", mkid.validate())?;

    let a = f.mask.active_mm;
    let active = section("mask", Rect::new(Vec2::new(a[0], a[1]), Vec2::new(a[2], a[3])))?;
    let half = f.layout.device_half_size_mm;
    if a.iter().any(|c| !c.is_finite() || c.abs() > half) {
        return Err(cfg_err(
            "mask.active_mm",
            format!("active region must fit the device plane (|coordinate| <= {half} mm)"),
        ));
    }
    let holes = f
        .mask
        .holes
        .iter()
        .map(|h| Hole {
            center: Vec2::new(h[0], h[1]),
            radius: h[2],
        })
        .collect();
    let mask = MaskPattern {
        kind: f.mask.kind,
        holes,
        active,
    };
    section("mask", mask.validate())?;

    let background = BackgroundModel {
        coupling: f.background.coupling,
        scale: f.background.scale,
    };
    section("background", background.validate())?;
    let acquisition = Acquisition {
        settle_s: f.acquisition.settle_s,
        noise_rel: f.acquisition.noise_rel,
    };
    for (k, v) in [("settle_s", acquisition.settle_s), ("noise_rel", acquisition.noise_rel)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(cfg_err(format!("acquisition.{k}"), "must be >= 0"));
        }
    }
    // Cross-check: the fold legs must fit inside the focal distance.
    if f.layout.focuser_to_mems_mm + f.layout.mems_to_fold_mm >= f.layout.focal_length_mm {
        return Err(cfg_err(
            "layout.focal_length_mm",
            "shorter than the focuser→MEMS→fold path",
        ));
    }
    Ok(TwinParams {
        electrical,
        layout,
        spot,
        mkid,
        mask,
        background,
        acquisition,
    })
}

/// Maps model field names back to the unit-suffixed config keys.
fn rename_electrical(e: Error, _s: &ElectricalSection) -> Error {
    match e {
        Error::Invalid { field, reason } => {
            let key = match field.as_str() {
                "driver_capacitance_limit" => "driver_capacitance_limit_pf".to_string(),
                "mirror_capacitance" => "mirror_capacitance_pf".to_string(),
                "cable_capacitance" => "cable_capacitance_pf".to_string(),
                "resting_power" => "resting_power_uw".to_string(),
                "max_slew" => "max_slew_per_s".to_string(),
                "common_mode_sum" => "common_mode_sum_v".to_string(),
                "channel_max" => "channel_max_v".to_string(),
                f if f.starts_with("theta_max") => f.replacen("theta_max", "theta_max_deg", 1),
                f if f.starts_with("instability_regions") => f.replacen("instability_regions", "instability", 1),
                f => f.to_string(),
            };
            Error::Invalid { field: key, reason }
        }
        other => other,
    }
}
