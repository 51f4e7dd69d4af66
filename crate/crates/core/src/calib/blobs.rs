//! Hole detection in grid response maps and blob shape metrics.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::{PlanKind, ResponseMap};
use crate::VoltageCoord;

/// One connected above-threshold region of a response map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// Weighted centroid in voltage coordinates.
    pub centroid: VoltageCoord,
    /// Sum of weights (delta above the map minimum).
    pub weight: f64,
    /// Weighted central second moments `[cxx, cxy, cyy]`, voltage units².
    pub second_moments: [f64; 3],
    pub pixels: usize,
}

pub type BlobSet = Vec<Blob>;

/// Thresholds `map` at `threshold_frac` of its range above the minimum and
/// returns 4-connected components in row-major discovery order. NaN samples
/// are treated as missing.
pub fn detect_holes(map: &ResponseMap, threshold_frac: f64) -> Result<BlobSet> {
    if !(threshold_frac > 0.0 && threshold_frac < 1.0) {
        return Err(Error::invalid("threshold_frac", "must be in (0, 1)"));
    }
    if !matches!(map.plan.kind, PlanKind::Grid { .. }) {
        return Err(Error::Validation("hole detection needs a grid map".into()));
    }
    let (nx, ny) = map.plan.shape();
    let grid = map.grid();
    let finite = grid.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Ok(Vec::new());
    }
    let thr = threshold_frac * (hi - lo);
    let above = |ix: usize, iy: usize| {
        let v = grid[iy][ix];
        v.is_finite() && v - lo > thr
    };
    let coord = |ix: usize, iy: usize| map.plan.point(iy * nx + ix).2;

    let mut seen = vec![false; nx * ny];
    let mut blobs = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            if seen[iy * nx + ix] || !above(ix, iy) {
                continue;
            }
            let mut members = Vec::new();
            let mut queue = VecDeque::from([(ix, iy)]);
            seen[iy * nx + ix] = true;
            while let Some((x, y)) = queue.pop_front() {
                members.push((x, y));
                let mut push = |x2: usize, y2: usize| {
                    if !seen[y2 * nx + x2] && above(x2, y2) {
                        seen[y2 * nx + x2] = true;
                        queue.push_back((x2, y2));
                    }
                };
                if x > 0 {
                    push(x - 1, y);
                }
                if x + 1 < nx {
                    push(x + 1, y);
                }
                if y > 0 {
                    push(x, y - 1);
                }
                if y + 1 < ny {
                    push(x, y + 1);
                }
            }
            let pts: Vec<(VoltageCoord, f64)> = members
                .iter()
                .map(|&(x, y)| (coord(x, y), grid[y][x] - lo))
                .collect();
            let w: f64 = pts.iter().map(|p| p.1).sum();
            let mx = pts.iter().map(|(v, q)| q * v.vx).sum::<f64>() / w;
            let my = pts.iter().map(|(v, q)| q * v.vy).sum::<f64>() / w;
            let mut m = [0.0; 3];
            for (v, q) in &pts {
                let (dx, dy) = (v.vx - mx, v.vy - my);
                m[0] += q * dx * dx;
                m[1] += q * dx * dy;
                m[2] += q * dy * dy;
            }
            blobs.push(Blob {
                centroid: VoltageCoord { vx: mx, vy: my },
                weight: w,
                second_moments: m.map(|c| c / w),
                pixels: members.len(),
            });
        }
    }
    Ok(blobs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Distortion {
    /// `sqrt(1 - λmin/λmax)` of the blob's second moments; 0 for a circle.
    pub eccentricity: f64,
    /// Direction of the major axis in voltage space, radians in (-π/2, π/2].
    pub elongation_axis: f64,
    /// `sqrt(λmax/λmin)`.
    pub axis_ratio: f64,
}

/// Shape of a detected hole. The true hole is circular, so any eccentricity
/// is distortion introduced by the voltage→position mapping.
pub fn distortion_metrics(blob: &Blob) -> Result<Distortion> {
    let [cxx, cxy, cyy] = blob.second_moments;
    let tr = cxx + cyy;
    let disc = ((cxx - cyy).powi(2) / 4.0 + cxy * cxy).sqrt();
    let (l1, l2) = (tr / 2.0 + disc, tr / 2.0 - disc);
    if blob.pixels < 2 || !(l1 > 0.0) {
        return Err(Error::UndefinedMoments);
    }
    let l2 = l2.max(0.0);
    Ok(Distortion {
        eccentricity: (1.0 - l2 / l1).max(0.0).sqrt(),
        elongation_axis: 0.5 * (2.0 * cxy).atan2(cxx - cyy),
        axis_ratio: if l2 > 0.0 { (l1 / l2).sqrt() } else { f64::INFINITY },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::{plan_grid, MapMetadata, ResponseSample, SourceSetting, Timing};

    fn map_from(nx: usize, ny: usize, f: impl Fn(f64, f64) -> f64) -> ResponseMap {
        let plan = plan_grid(
            [-1.0, 1.0],
            [-1.0, 1.0],
            nx,
            ny,
            Timing::default(),
            SourceSetting {
                wavelength_nm: 650.0,
                power_w: 1.0,
            },
        )
        .unwrap();
        let samples = plan
            .points()
            .map(|(ix, iy, v)| {
                let d = f(v.vx, v.vy);
                ResponseSample {
                    ix,
                    iy,
                    v,
                    s21_off: 0.0,
                    s21_on: d,
                    delta: d,
                    timestamp: 0.0,
                    flags: Default::default(),
                }
            })
            .collect();
        ResponseMap {
            plan,
            samples,
            metadata: MapMetadata {
                complete: true,
                ..Default::default()
            },
        }
    }

    #[test]
    fn zeros_give_no_blobs() {
        assert!(detect_holes(&map_from(11, 11, |_, _| 0.0), 0.5).unwrap().is_empty());
    }

    #[test]
    fn disc_raster_is_round() {
        let m = map_from(81, 81, |x, y| if (x - 0.1).hypot(y + 0.2) < 0.4 { 1.0 } else { 0.0 });
        let b = detect_holes(&m, 0.5).unwrap();
        assert_eq!(b.len(), 1);
        let d = distortion_metrics(&b[0]).unwrap();
        // e = sqrt(1 - 1/ratio²) is steep near 1: a 0.5% axis mismatch from
        // rasterization already reads as e ≈ 0.1.
        assert!(d.eccentricity < 0.15 && d.axis_ratio < 1.01, "{d:?}");
        assert!((b[0].centroid.vx - 0.1).abs() < 0.025 && (b[0].centroid.vy + 0.2).abs() < 0.025);
    }

    #[test]
    fn two_separate_blobs_and_offset_invariance() {
        let f = |x: f64, y: f64| {
            let a = if (x + 0.5).hypot(y) < 0.2 { 1.0 } else { 0.0 };
            let b = if (x - 0.5).hypot(y - 0.5) < 0.2 { 0.8 } else { 0.0 };
            a + b
        };
        let b1 = detect_holes(&map_from(41, 41, f), 0.3).unwrap();
        let b2 = detect_holes(&map_from(41, 41, |x, y| f(x, y) + 7.0), 0.3).unwrap();
        assert_eq!(b1.len(), 2);
        assert_eq!(b1.len(), b2.len());
        for (a, b) in b1.iter().zip(&b2) {
            assert_eq!(a.pixels, b.pixels);
            assert!(a.centroid.distance(&b.centroid) < 1e-12);
        }
    }

    #[test]
    fn single_pixel_blob_has_no_shape() {
        let m = map_from(11, 11, |x, y| if x == 0.0 && y == 0.0 { 1.0 } else { 0.0 });
        let b = detect_holes(&m, 0.5).unwrap();
        assert_eq!(b.len(), 1);
        assert!(matches!(distortion_metrics(&b[0]), Err(Error::UndefinedMoments)));
    }

    #[test]
    fn stretched_blob_axis() {
        let m = map_from(81, 81, |x, y| if (x / 0.5).hypot(y / 0.15) < 1.0 { 1.0 } else { 0.0 });
        let d = distortion_metrics(&detect_holes(&m, 0.5).unwrap()[0]).unwrap();
        assert!(d.eccentricity > 0.9 && d.elongation_axis.abs() < 1e-9);
    }
}
