//! Scan plans, execution against the twin, response maps and run-to-run
//! comparison.

use std::fmt;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::linspace_at;
use crate::steering::Stability;
use crate::twin::Twin;
use crate::VoltageCoord;

/// Wait after each exposure when none is given, s.
pub const DEFAULT_RELAX_WAIT_S: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    /// Source-on time before the "on" reading, s.
    pub dwell_on: f64,
    /// Source-off time before the "off" reading, s. Overlaps the settle time.
    pub dwell_off: f64,
    #[serde(default = "default_relax")]
    pub relax_wait: f64,
}

fn default_relax() -> f64 {
    DEFAULT_RELAX_WAIT_S
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            dwell_on: 0.5,
            dwell_off: 0.0,
            relax_wait: DEFAULT_RELAX_WAIT_S,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSetting {
    pub wavelength_nm: f64,
    pub power_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PlanKind {
    Grid {
        vx_range: [f64; 2],
        vy_range: [f64; 2],
        nx: usize,
        ny: usize,
    },
    Line {
        start: VoltageCoord,
        end: VoltageCoord,
        n_points: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    #[serde(flatten)]
    pub kind: PlanKind,
    pub timing: Timing,
    pub source: SourceSetting,
}

fn check_range(field: &str, r: [f64; 2], n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(field, "need at least 2 points per axis"));
    }
    for x in r {
        if !(x.is_finite() && (-1.0..=1.0).contains(&x)) {
            return Err(Error::invalid(field, format!("{x} is outside [-1, 1]")));
        }
    }
    if r[0] == r[1] {
        return Err(Error::invalid(field, "degenerate range"));
    }
    Ok(())
}

impl ScanPlan {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PlanKind::Grid {
                vx_range,
                vy_range,
                nx,
                ny,
            } => {
                check_range("vx_range", vx_range, nx)?;
                check_range("vy_range", vy_range, ny)?;
            }
            PlanKind::Line { start, end, n_points } => {
                VoltageCoord::new(start.vx, start.vy)?;
                VoltageCoord::new(end.vx, end.vy)?;
                if n_points < 2 {
                    return Err(Error::invalid("n_points", "need at least 2 points"));
                }
                if start == end {
                    return Err(Error::invalid("end", "line start and end coincide"));
                }
            }
        }
        let t = &self.timing;
        for (name, x) in [("dwell_on", t.dwell_on), ("dwell_off", t.dwell_off), ("relax_wait", t.relax_wait)] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::invalid(name, "must be a finite time >= 0"));
            }
        }
        crate::optics::check_band(self.source.wavelength_nm)?;
        if !(self.source.power_w.is_finite() && self.source.power_w >= 0.0) {
            return Err(Error::invalid("power_w", "must be >= 0"));
        }
        Ok(())
    }

    /// `(nx, ny)`; lines are `(n, 1)`.
    pub fn shape(&self) -> (usize, usize) {
        match self.kind {
            PlanKind::Grid { nx, ny, .. } => (nx, ny),
            PlanKind::Line { n_points, .. } => (n_points, 1),
        }
    }

    pub fn len(&self) -> usize {
        let (a, b) = self.shape();
        a * b
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point `k` in execution order as `(ix, iy, v)`.
    pub fn point(&self, k: usize) -> (usize, usize, VoltageCoord) {
        match self.kind {
            PlanKind::Grid {
                vx_range,
                vy_range,
                nx,
                ny,
            } => {
                let (ix, iy) = (k % nx, k / nx);
                let v = VoltageCoord {
                    vx: linspace_at(vx_range[0], vx_range[1], ix, nx),
                    vy: linspace_at(vy_range[0], vy_range[1], iy, ny),
                };
                (ix, iy, v)
            }
            PlanKind::Line { start, end, n_points } => {
                let v = VoltageCoord {
                    vx: linspace_at(start.vx, end.vx, k, n_points),
                    vy: linspace_at(start.vy, end.vy, k, n_points),
                };
                (k, 0, v)
            }
        }
    }

    pub fn points(&self) -> impl Iterator<Item = (usize, usize, VoltageCoord)> + '_ {
        (0..self.len()).map(|k| self.point(k))
    }

    /// Spacing between neighbouring points along the line, or the larger
    /// grid pitch, in voltage units.
    pub fn step(&self) -> f64 {
        match self.kind {
            PlanKind::Grid {
                vx_range,
                vy_range,
                nx,
                ny,
            } => {
                let sx = (vx_range[1] - vx_range[0]).abs() / (nx - 1) as f64;
                let sy = (vy_range[1] - vy_range[0]).abs() / (ny - 1) as f64;
                sx.max(sy)
            }
            PlanKind::Line { start, end, n_points } => start.distance(&end) / (n_points - 1) as f64,
        }
    }
}

/// Grid plan over `vx_range × vy_range`, endpoints included.
pub fn plan_grid(
    vx_range: [f64; 2],
    vy_range: [f64; 2],
    nx: usize,
    ny: usize,
    timing: Timing,
    source: SourceSetting,
) -> Result<ScanPlan> {
    let p = ScanPlan {
        kind: PlanKind::Grid {
            vx_range,
            vy_range,
            nx,
            ny,
        },
        timing,
        source,
    };
    p.validate()?;
    Ok(p)
}

/// `n` equally spaced points from `start` to `end` inclusive.
pub fn plan_line(
    start: VoltageCoord,
    end: VoltageCoord,
    n: usize,
    timing: Timing,
    source: SourceSetting,
) -> Result<ScanPlan> {
    let p = ScanPlan {
        kind: PlanKind::Line {
            start,
            end,
            n_points: n,
        },
        timing,
        source,
    };
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampleFlags {
    /// Point lies in an instability region.
    pub unstable: bool,
    /// Beam did not reach the device plane.
    pub missed_plane: bool,
    /// Measured despite the interlock.
    pub overridden: bool,
}

impl SampleFlags {
    const TOKENS: [&'static str; 3] = ["unstable", "missed_plane", "overridden"];

    fn bits(&self) -> [bool; 3] {
        [self.unstable, self.missed_plane, self.overridden]
    }

    pub fn is_empty(&self) -> bool {
        !self.bits().iter().any(|&b| b)
    }

    /// Parses the semicolon-joined form; the empty string is no flags.
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        let mut f = Self::default();
        for tok in s.split(';').filter(|t| !t.is_empty()) {
            match tok {
                "unstable" => f.unstable = true,
                "missed_plane" => f.missed_plane = true,
                "overridden" => f.overridden = true,
                other => return Err(format!("unknown flag `{other}`")),
            }
        }
        Ok(f)
    }
}

impl fmt::Display for SampleFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on: Vec<&str> = Self::TOKENS
            .iter()
            .zip(self.bits())
            .filter_map(|(t, b)| b.then_some(*t))
            .collect();
        f.write_str(&on.join(";"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub ix: usize,
    pub iy: usize,
    pub v: VoltageCoord,
    pub s21_off: f64,
    pub s21_on: f64,
    /// Always `s21_on - s21_off` as recorded.
    pub delta: f64,
    /// Simulated clock at the "on" reading, s.
    pub timestamp: f64,
    pub flags: SampleFlags,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MapMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub session_id: String,
    /// Simulated clock when the scan started, s.
    pub created_s: f64,
    /// False when the scan was cancelled before the last point.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMap {
    pub plan: ScanPlan,
    pub samples: Vec<ResponseSample>,
    pub metadata: MapMetadata,
}

fn same_bits(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

impl ResponseMap {
    /// Checks ordering, count and the recorded difference.
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        let n = self.plan.len();
        if self.metadata.complete && self.samples.len() != n {
            return Err(Error::Validation(format!(
                "map holds {} samples but the plan has {n} points",
                self.samples.len()
            )));
        }
        if self.samples.len() > n {
            return Err(Error::Validation(format!("{} samples exceed the plan's {n}", self.samples.len())));
        }
        for (k, s) in self.samples.iter().enumerate() {
            let (ix, iy, v) = self.plan.point(k);
            if (s.ix, s.iy) != (ix, iy) {
                return Err(Error::Validation(format!(
                    "sample {k} is ({}, {}), expected ({ix}, {iy}) in row-major order",
                    s.ix, s.iy
                )));
            }
            if !(same_bits(s.v.vx, v.vx) && same_bits(s.v.vy, v.vy)) {
                return Err(Error::Validation(format!("sample {k} voltage does not match the plan")));
            }
            if !same_bits(s.delta, s.s21_on - s.s21_off) {
                return Err(Error::Validation(format!("sample {k}: delta != s21_on - s21_off")));
            }
        }
        Ok(())
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.delta).collect()
    }

    /// Deltas as `rows[iy][ix]`. Missing samples of a partial map are NaN.
    pub fn grid(&self) -> Vec<Vec<f64>> {
        let (nx, ny) = self.plan.shape();
        let mut g = vec![vec![f64::NAN; nx]; ny];
        for s in &self.samples {
            g[s.iy][s.ix] = s.delta;
        }
        g
    }
}

/// Extra controls for [`execute`].
#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    /// Measure inside instability regions instead of skipping.
    pub allow_unstable: bool,
    pub config_hash: String,
    pub session_id: String,
}

/// Per-point progress report; the callback may stop the scan.
#[derive(Debug, Clone, Copy)]
pub struct Progress<'a> {
    pub done: usize,
    pub total: usize,
    pub sample: &'a ResponseSample,
}

/// Runs `plan` on `twin`. Equivalent to [`execute_with`] without a callback.
pub fn execute(plan: &ScanPlan, twin: &mut Twin, opts: &ExecOptions) -> Result<ResponseMap> {
    execute_with(plan, twin, opts, |_| ControlFlow::Continue(()))
}

/// Runs `plan` on `twin`, reporting after each point.
///
/// Per point: slew, settle (the longer of the configured settle time and
/// `dwell_off`), read off, source on for `dwell_on`, read on, source off,
/// wait `relax_wait`. Returning `Break` from `on_point` ends the scan at that
/// point boundary with a map marked incomplete.
pub fn execute_with<F>(plan: &ScanPlan, twin: &mut Twin, opts: &ExecOptions, mut on_point: F) -> Result<ResponseMap>
where
    F: FnMut(Progress<'_>) -> ControlFlow<()>,
{
    plan.validate()?;
    let created_s = twin.clock();
    let settle = twin.params().acquisition.settle_s.max(plan.timing.dwell_off);
    let total = plan.len();
    let mut samples = Vec::with_capacity(total);
    let mut complete = true;

    for (k, (ix, iy, v)) in plan.points().enumerate() {
        let unstable = matches!(twin.stability(&v), Stability::Unstable(_));
        let sample = if unstable && !opts.allow_unstable {
            ResponseSample {
                ix,
                iy,
                v,
                s21_off: f64::NAN,
                s21_on: f64::NAN,
                delta: f64::NAN,
                timestamp: twin.clock(),
                flags: SampleFlags {
                    unstable: true,
                    ..Default::default()
                },
            }
        } else {
            measure_point(plan, twin, ix, iy, v, settle, unstable)?
        };
        samples.push(sample);
        let flow = on_point(Progress {
            done: k + 1,
            total,
            sample: samples.last().expect("just pushed"),
        });
        if flow.is_break() && k + 1 < total {
            complete = false;
            break;
        }
    }

    Ok(ResponseMap {
        plan: *plan,
        samples,
        metadata: MapMetadata {
            config_hash: opts.config_hash.clone(),
            seed: twin.seed(),
            session_id: opts.session_id.clone(),
            created_s,
            complete,
        },
    })
}

fn measure_point(
    plan: &ScanPlan,
    twin: &mut Twin,
    ix: usize,
    iy: usize,
    v: VoltageCoord,
    settle: f64,
    unstable: bool,
) -> Result<ResponseSample> {
    twin.slew_to(&v, true)?;
    twin.set_source(false, plan.source.wavelength_nm, plan.source.power_w)?;
    twin.wait(settle)?;
    let s21_off = twin.read_s21(0.0)?;

    twin.set_source(true, plan.source.wavelength_nm, plan.source.power_w)?;
    let ill = twin.current_illumination()?.expect("source is on");
    twin.expose(plan.timing.dwell_on)?;
    let s21_on = twin.read_s21(ill.absorbed_w)?;
    let timestamp = twin.clock();
    twin.set_source(false, plan.source.wavelength_nm, plan.source.power_w)?;
    twin.deposit(ill.absorbed_w);
    twin.wait(plan.timing.relax_wait)?;

    Ok(ResponseSample {
        ix,
        iy,
        v,
        s21_off,
        s21_on,
        delta: s21_on - s21_off,
        timestamp,
        flags: SampleFlags {
            unstable,
            missed_plane: ill.position.is_none(),
            overridden: unstable,
        },
    })
}

/// Run-to-run comparison of two maps taken with the same plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Repeatability {
    /// Separation of the detected steps, voltage units. Signed along the
    /// line for line scans; Euclidean for grids.
    pub step_offset: f64,
    pub rms_delta_diff: f64,
    /// Peak of the normalized cross-correlation over all lags.
    pub peak_corr: f64,
}

/// Location of the largest absolute discrete gradient.
///
/// Lines: arc length from the start to the midpoint of the steepest pair.
/// Grids: the voltage coordinate of the steepest forward difference pair.
pub fn step_location(map: &ResponseMap) -> Result<VoltageCoord> {
    let (nx, ny) = map.plan.shape();
    if map.samples.len() != nx * ny {
        return Err(Error::Validation("step detection needs a complete map".into()));
    }
    let g = map.grid();
    let mut best: Option<(f64, VoltageCoord)> = None;
    let mut consider = |mag: f64, a: usize, b: usize| {
        if !mag.is_finite() {
            return;
        }
        if best.is_none_or(|(m, _)| mag > m) {
            let (pa, pb) = (map.samples[a].v, map.samples[b].v);
            let mid = VoltageCoord {
                vx: 0.5 * (pa.vx + pb.vx),
                vy: 0.5 * (pa.vy + pb.vy),
            };
            best = Some((mag, mid));
        }
    };
    for iy in 0..ny {
        for ix in 0..nx {
            let k = iy * nx + ix;
            if ix + 1 < nx {
                consider((g[iy][ix + 1] - g[iy][ix]).abs(), k, k + 1);
            }
            if iy + 1 < ny {
                consider((g[iy + 1][ix] - g[iy][ix]).abs(), k, k + nx);
            }
        }
    }
    best.map(|(_, v)| v)
        .ok_or_else(|| Error::Degenerate("no finite gradient in the map".into()))
}

fn corr_peak(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let ny = a.len();
    let nx = a[0].len();
    let stats = |m: &[Vec<f64>]| {
        let vals: Vec<f64> = m.iter().flatten().copied().filter(|x| x.is_finite()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        // A constant map leaves only rounding residue in the variance.
        let constant = vals.windows(2).all(|w| w[0] == w[1]);
        (mean, if constant { 0.0 } else { var }, vals.len())
    };
    let (ma, va, na) = stats(a);
    let (mb, vb, nb) = stats(b);
    if na == 0 || nb == 0 || va <= 0.0 || vb <= 0.0 {
        return Err(Error::Degenerate(
            "cross-correlation undefined: a map has zero variance".into(),
        ));
    }
    let norm = (va * vb).sqrt();
    let mut peak = f64::NEG_INFINITY;
    for dy in -(ny as isize - 1)..ny as isize {
        for dx in -(nx as isize - 1)..nx as isize {
            let mut acc = 0.0;
            let mut count = 0usize;
            for iy in 0..ny {
                let jy = iy as isize + dy;
                if jy < 0 || jy >= ny as isize {
                    continue;
                }
                for ix in 0..nx {
                    let jx = ix as isize + dx;
                    if jx < 0 || jx >= nx as isize {
                        continue;
                    }
                    let (x, y) = (a[iy][ix], b[jy as usize][jx as usize]);
                    if x.is_finite() && y.is_finite() {
                        acc += (x - ma) * (y - mb);
                        count += 1;
                    }
                }
            }
            if count > 0 {
                // Biased estimator: shifted overlaps are down-weighted, so
                // the zero-lag value of a map against itself is the maximum.
                peak = peak.max(acc / (na.max(nb) as f64 * norm));
            }
        }
    }
    Ok(peak)
}

/// Compares two maps taken with the same plan.
pub fn repeatability(a: &ResponseMap, b: &ResponseMap) -> Result<Repeatability> {
    if a.plan != b.plan {
        return Err(Error::Validation("maps were taken with different plans".into()));
    }
    let la = step_location(a)?;
    let lb = step_location(b)?;
    let step_offset = match a.plan.kind {
        PlanKind::Line { start, .. } => start.distance(&la) - start.distance(&lb),
        PlanKind::Grid { .. } => la.distance(&lb),
    };
    let diffs: Vec<f64> = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| x.delta - y.delta)
        .filter(|d| d.is_finite())
        .collect();
    if diffs.is_empty() {
        return Err(Error::Degenerate("no finite sample pairs".into()));
    }
    let rms_delta_diff = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
    let peak_corr = corr_peak(&a.grid(), &b.grid())?;
    Ok(Repeatability {
        step_offset,
        rms_delta_diff,
        peak_corr,
    })
}
