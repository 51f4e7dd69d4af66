//! Voltage → device-plane mapping: an affine map applied after the per-axis
//! saturation law, fitted to detected holes and inverted for steering.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::blobs::Blob;
use super::lm::{minimize, LmOptions};
use crate::error::{Error, Result};
use crate::steering::{saturation, saturation_slope};
use crate::vector::Vec2;
use crate::VoltageCoord;

/// Default gate on the fit residual, mm.
pub const DEFAULT_GATE_MM: f64 = 0.5;
const KAPPA_STARTS: [f64; 3] = [0.5, 1.5, 3.0];
const MIN_AFFINE: usize = 3;
const MIN_KAPPA: usize = 5;

/// `predict(v) = A · [g(vx; κx), g(vy; κy)] + b`, positions in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingModel {
    /// Row-major `[a11, a12, a21, a22]`, mm per normalized unit.
    pub affine: [f64; 4],
    pub offset: [f64; 2],
    pub kappa: [f64; 2],
    pub residual_rms_mm: f64,
    /// Config hash of the data the model was fitted to.
    #[serde(default)]
    pub provenance: String,
}

fn saturation_dkappa(v: f64, kappa: f64) -> f64 {
    let k = kappa.abs();
    let d = if k < 1e-4 {
        2.0 * k * v * (1.0 - v * v) / 3.0
    } else {
        let (t, tk) = (k.tanh(), (k * v).tanh());
        let (sv, sk) = (1.0 / (k * v).cosh().powi(2), 1.0 / k.cosh().powi(2));
        (v * sv * t - tk * sk) / (t * t)
    };
    d * kappa.signum()
}

impl MappingModel {
    pub fn affine_only(affine: [f64; 4], offset: [f64; 2]) -> Self {
        Self {
            affine,
            offset,
            kappa: [0.0, 0.0],
            residual_rms_mm: 0.0,
            provenance: String::new(),
        }
    }

    fn a(&self) -> Matrix2<f64> {
        Matrix2::new(self.affine[0], self.affine[1], self.affine[2], self.affine[3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.affine.iter().chain(&self.offset).any(|x| !x.is_finite()) {
            return Err(Error::invalid("affine", "must be finite"));
        }
        if self.a().determinant().abs() <= 1e-9 {
            return Err(Error::invalid("affine", "matrix is singular (|det| <= 1e-9)"));
        }
        if self.kappa.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(Error::invalid("kappa", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn predict(&self, v: &VoltageCoord) -> Vec2<f64> {
        let w = Vector2::new(saturation(v.vx, self.kappa[0]), saturation(v.vy, self.kappa[1]));
        let p = self.a() * w;
        Vec2::new(p.x + self.offset[0], p.y + self.offset[1])
    }

    /// `∂predict/∂v`.
    pub fn jacobian(&self, v: &VoltageCoord) -> Matrix2<f64> {
        let d = Matrix2::from_diagonal(&Vector2::new(
            saturation_slope(v.vx, self.kappa[0]),
            saturation_slope(v.vy, self.kappa[1]),
        ));
        self.a() * d
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub gate_mm: f64,
    /// Fit κ when enough correspondences exist.
    pub fit_kappa: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            gate_mm: DEFAULT_GATE_MM,
            fit_kappa: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingFit {
    pub model: MappingModel,
    /// `(blob index, hole index)` pairs used in the fit.
    pub matches: Vec<(usize, usize)>,
    pub residuals_mm: Vec<f64>,
}

fn spread_ratio(pts: &[Vec2<f64>]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    let disc = ((sxx - syy).powi(2) / 4.0 + sxy * sxy).sqrt();
    let l1 = tr / 2.0 + disc;
    if l1 <= 0.0 {
        0.0
    } else {
        ((tr / 2.0 - disc) / l1).max(0.0)
    }
}

/// Linear least squares for `(A, b)` with the saturation fixed.
fn affine_lstsq(src: &[[f64; 2]], dst: &[Vec2<f64>]) -> Result<([f64; 4], [f64; 2])> {
    let n = src.len();
    let m = DMatrix::from_fn(n, 3, |i, k| match k {
        0 => src[i][0],
        1 => src[i][1],
        _ => 1.0,
    });
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * smax.max(1e-300) {
        return Err(Error::Degenerate("correspondences are collinear".into()));
    }
    let bx = DVector::from_iterator(n, dst.iter().map(|p| p.x));
    let by = DVector::from_iterator(n, dst.iter().map(|p| p.y));
    let sx = svd.solve(&bx, 1e-15).map_err(|e| Error::Degenerate(e.into()))?;
    let sy = svd.solve(&by, 1e-15).map_err(|e| Error::Degenerate(e.into()))?;
    Ok(([sx[0], sx[1], sy[0], sy[1]], [sx[2], sy[2]]))
}

fn warped(v: &[VoltageCoord], kappa: [f64; 2]) -> Vec<[f64; 2]> {
    v.iter()
        .map(|p| [saturation(p.vx, kappa[0]), saturation(p.vy, kappa[1])])
        .collect()
}

fn cost_of(model: &MappingModel, v: &[VoltageCoord], q: &[Vec2<f64>]) -> f64 {
    v.iter().zip(q).map(|(p, t)| (model.predict(p) - *t).norm().powi(2)).sum()
}

/// Mutual-nearest-neighbour pairs between predicted blob positions and holes.
fn mutual_nn(pred: &[Vec2<f64>], holes: &[Vec2<f64>]) -> Vec<(usize, usize)> {
    let nearest = |p: Vec2<f64>, set: &[Vec2<f64>]| {
        set.iter()
            .enumerate()
            .min_by(|a, b| p.distance(*a.1).total_cmp(&p.distance(*b.1)))
            .map(|(i, _)| i)
    };
    let mut out = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        if let Some(j) = nearest(*p, holes) {
            if nearest(holes[j], pred) == Some(i) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Establishes blob↔hole correspondences: a scale-and-shift start with the
/// axes assumed aligned, then alternating affine fits and mutual-nearest-
/// neighbour matching until the pairing is stable.
pub fn correspond(blobs: &[Blob], holes: &[Vec2<f64>]) -> Result<Vec<(usize, usize)>> {
    if blobs.len() < MIN_AFFINE || holes.len() < MIN_AFFINE {
        return Err(Error::Degenerate(format!(
            "need at least {MIN_AFFINE} blobs and holes, got {} and {}",
            blobs.len(),
            holes.len()
        )));
    }
    let v: Vec<Vec2<f64>> = blobs.iter().map(|b| Vec2::new(b.centroid.vx, b.centroid.vy)).collect();
    let centre = |s: &[Vec2<f64>]| {
        let n = s.len() as f64;
        Vec2::new(s.iter().map(|p| p.x).sum::<f64>() / n, s.iter().map(|p| p.y).sum::<f64>() / n)
    };
    let rms = |s: &[Vec2<f64>], c: Vec2<f64>| (s.iter().map(|p| (*p - c).norm().powi(2)).sum::<f64>() / s.len() as f64).sqrt();
    let (cv, ch) = (centre(&v), centre(holes));
    let (rv, rh) = (rms(&v, cv), rms(holes, ch));
    if !(rv > 0.0 && rh > 0.0) {
        return Err(Error::Degenerate("blobs or holes coincide".into()));
    }
    let s = rh / rv;
    let mut pred: Vec<Vec2<f64>> = v.iter().map(|p| (*p - cv) * s + ch).collect();
    let mut pairs = mutual_nn(&pred, holes);
    for _ in 0..20 {
        if pairs.len() < MIN_AFFINE {
            break;
        }
        let src: Vec<[f64; 2]> = pairs.iter().map(|&(i, _)| [v[i].x, v[i].y]).collect();
        let dst: Vec<Vec2<f64>> = pairs.iter().map(|&(_, j)| holes[j]).collect();
        let Ok((a, b)) = affine_lstsq(&src, &dst) else { break };
        pred = v
            .iter()
            .map(|p| Vec2::new(a[0] * p.x + a[1] * p.y + b[0], a[2] * p.x + a[3] * p.y + b[1]))
            .collect();
        let next = mutual_nn(&pred, holes);
        if next == pairs {
            break;
        }
        pairs = next;
    }
    if pairs.len() < MIN_AFFINE {
        return Err(Error::Degenerate(format!(
            "only {} unambiguous correspondences",
            pairs.len()
        )));
    }
    // Each matched blob must be clearly closer to its hole than to any other.
    for &(i, j) in &pairs {
        let d = pred[i].distance(holes[j]);
        let second = holes
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != j)
            .map(|(_, h)| pred[i].distance(*h))
            .fold(f64::INFINITY, f64::min);
        if d > 0.5 * second {
            return Err(Error::Degenerate(format!(
                "blob {i} is ambiguous between holes ({d:.3} mm vs {second:.3} mm)"
            )));
        }
    }
    Ok(pairs)
}

/// Fits the mapping to blob centroids given the known hole centres (mm).
pub fn fit_mapping(blobs: &[Blob], holes: &[Vec2<f64>], opts: &FitOptions) -> Result<MappingFit> {
    let pairs = correspond(blobs, holes)?;
    let v: Vec<VoltageCoord> = pairs.iter().map(|&(i, _)| blobs[i].centroid).collect();
    let q: Vec<Vec2<f64>> = pairs.iter().map(|&(_, j)| holes[j]).collect();
    let vp: Vec<Vec2<f64>> = v.iter().map(|p| Vec2::new(p.vx, p.vy)).collect();
    if spread_ratio(&q) < 1e-9 || spread_ratio(&vp) < 1e-9 {
        return Err(Error::Degenerate("correspondences are collinear".into()));
    }

    let (a, b) = affine_lstsq(&warped(&v, [0.0, 0.0]), &q)?;
    let mut best = MappingModel::affine_only(a, b);
    let mut best_cost = cost_of(&best, &v, &q);

    if opts.fit_kappa && pairs.len() >= MIN_KAPPA {
        let n = v.len();
        let res = |p: &DVector<f64>| {
            let m = MappingModel {
                affine: [p[0], p[1], p[2], p[3]],
                offset: [p[4], p[5]],
                kappa: [p[6], p[7]],
                residual_rms_mm: 0.0,
                provenance: String::new(),
            };
            let mut r = DVector::zeros(2 * n);
            for (i, (pv, t)) in v.iter().zip(&q).enumerate() {
                let d = m.predict(pv) - *t;
                r[2 * i] = d.x;
                r[2 * i + 1] = d.y;
            }
            r
        };
        let jac = |p: &DVector<f64>| {
            let mut j = DMatrix::zeros(2 * n, 8);
            for (i, pv) in v.iter().enumerate() {
                let (gx, gy) = (saturation(pv.vx, p[6]), saturation(pv.vy, p[7]));
                let (dx, dy) = (saturation_dkappa(pv.vx, p[6]), saturation_dkappa(pv.vy, p[7]));
                let (r0, r1) = (2 * i, 2 * i + 1);
                j[(r0, 0)] = gx;
                j[(r0, 1)] = gy;
                j[(r0, 4)] = 1.0;
                j[(r0, 6)] = p[0] * dx;
                j[(r0, 7)] = p[1] * dy;
                j[(r1, 2)] = gx;
                j[(r1, 3)] = gy;
                j[(r1, 5)] = 1.0;
                j[(r1, 6)] = p[2] * dx;
                j[(r1, 7)] = p[3] * dy;
            }
            j
        };
        for k0 in KAPPA_STARTS {
            let Ok((a, b)) = affine_lstsq(&warped(&v, [k0, k0]), &q) else { continue };
            let p0 = DVector::from_vec(vec![a[0], a[1], a[2], a[3], b[0], b[1], k0, k0]);
            let Ok(r) = minimize(res, Some(jac), p0, &LmOptions::default()) else { continue };
            let p = r.params;
            let m = MappingModel {
                affine: [p[0], p[1], p[2], p[3]],
                offset: [p[4], p[5]],
                kappa: [p[6].abs(), p[7].abs()],
                residual_rms_mm: 0.0,
                provenance: String::new(),
            };
            let c = cost_of(&m, &v, &q);
            if c < best_cost && m.validate().is_ok() {
                best = m;
                best_cost = c;
            }
        }
    }

    let residuals_mm: Vec<f64> = v.iter().zip(&q).map(|(p, t)| best.predict(p).distance(*t)).collect();
    best.residual_rms_mm = (best_cost / v.len() as f64).sqrt();
    best.validate()?;
    if !(best.residual_rms_mm <= opts.gate_mm) {
        return Err(Error::CalibrationFailed {
            residual_rms_um: best.residual_rms_mm * 1e3,
            gate_um: opts.gate_mm * 1e3,
            matched: pairs.len(),
            residuals_um: residuals_mm.iter().map(|r| r * 1e3).collect(),
        });
    }
    Ok(MappingFit {
        model: best,
        matches: pairs,
        residuals_mm,
    })
}

/// Closest point of the reachable parallelogram `A·[-1,1]² + b` to `t`, as
/// saturated coordinates `w`.
fn nearest_reachable(a: &Matrix2<f64>, b: Vector2<f64>, t: Vector2<f64>) -> Vector2<f64> {
    let inside = |w: &Vector2<f64>| w.x.abs() <= 1.0 && w.y.abs() <= 1.0;
    if let Some(inv) = a.try_inverse() {
        let w = inv * (t - b);
        if inside(&w) {
            return w;
        }
    }
    let mut best = Vector2::zeros();
    let mut best_d = f64::INFINITY;
    for axis in 0..2 {
        for side in [-1.0, 1.0] {
            // Fix one coordinate at the edge, solve the other in closed form.
            let fixed = a.column(axis) * side;
            let free = a.column(1 - axis);
            let r = t - b - fixed;
            let s = (free.dot(&r) / free.norm_squared()).clamp(-1.0, 1.0);
            let mut w = Vector2::zeros();
            w[axis] = side;
            w[1 - axis] = s;
            let d = (a * w + b - t).norm();
            if d < best_d {
                best_d = d;
                best = w;
            }
        }
    }
    best
}

/// Voltage command that lands on `target` (mm) under `model`.
///
/// Damped Newton from the affine-inverse start, kept inside `[-1, 1]²`.
/// Targets outside the model's image of `[-1, 1]²` are rejected with the
/// nearest reachable point.
pub fn invert_mapping(model: &MappingModel, target: Vec2<f64>) -> Result<VoltageCoord> {
    model.validate()?;
    let a = model.a();
    let b = Vector2::new(model.offset[0], model.offset[1]);
    let t = Vector2::new(target.x, target.y);
    let inv = a.try_inverse().ok_or_else(|| Error::Degenerate("singular affine".into()))?;
    let w = inv * (t - b);
    // Relative slack so that points on the boundary stay reachable.
    if w.x.abs() > 1.0 + 1e-12 || w.y.abs() > 1.0 + 1e-12 {
        let n = a * nearest_reachable(&a, b, t) + b;
        return Err(Error::Unreachable {
            x_mm: target.x,
            y_mm: target.y,
            nearest_x_mm: n.x,
            nearest_y_mm: n.y,
        });
    }
    let clamp = |x: f64| x.clamp(-1.0, 1.0);
    let mut v = VoltageCoord {
        vx: clamp(w.x),
        vy: clamp(w.y),
    };
    let resid = |v: &VoltageCoord| {
        let p = model.predict(v);
        Vector2::new(p.x - t.x, p.y - t.y)
    };
    let mut r = resid(&v);
    for _ in 0..100 {
        if r.norm() < 1e-12 * (1.0 + t.norm()) {
            break;
        }
        let Some(jinv) = model.jacobian(&v).try_inverse() else { break };
        let step = jinv * r;
        let mut alpha = 1.0;
        let mut improved = false;
        while alpha > 1e-12 {
            let cand = VoltageCoord {
                vx: clamp(v.vx - alpha * step.x),
                vy: clamp(v.vy - alpha * step.y),
            };
            let rc = resid(&cand);
            if rc.norm() < r.norm() {
                v = cand;
                r = rc;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if r.norm() >= 1e-3 {
        return Err(Error::Fit(format!(
            "inversion stalled {:.3} μm from the target",
            r.norm() * 1e3
        )));
    }
    Ok(v)
}
