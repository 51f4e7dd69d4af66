//! Beam-spot size from a camera frame: principal axes from intensity moments,
//! then a 1D Gaussian fit along each axis through the centroid.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::image::IntensityImage;
use super::lm::{minimize, LmOptions};
use crate::error::{Error, Result};
use crate::optics::BeamSpot;
use crate::vector::Vec2;

/// Peak must exceed this multiple of the frame median.
pub const DOMINANCE_RATIO: f64 = 5.0;
/// Clipped pixels tolerated before the core counts as saturated.
pub const MAX_CLIPPED: usize = 2;
/// Fraction of the peak above background used for the moment estimate.
const MOMENT_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpotFit {
    /// Centre in image coordinates (mm, x along columns, y along rows).
    pub spot: BeamSpot<f64>,
    /// ±2σ diameters, μm.
    pub diameter_major_um: f64,
    pub diameter_minor_um: f64,
    pub background: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy)]
struct Profile1d {
    offset: f64,
    amplitude: f64,
    sigma_px: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

fn fit_profile(samples: &[(f64, f64)], guess: Profile1d) -> Result<Profile1d> {
    if samples.len() < 5 {
        return Err(Error::Fit("profile too short to fit".into()));
    }
    let model = |p: &DVector<f64>, s: f64| {
        let z = (s - p[2]) / p[3];
        (p[0] + p[1] * (-0.5 * z * z).exp(), z)
    };
    let res = |p: &DVector<f64>| DVector::from_iterator(samples.len(), samples.iter().map(|&(s, y)| model(p, s).0 - y));
    let jac = |p: &DVector<f64>| {
        DMatrix::from_fn(samples.len(), 4, |i, k| {
            let s = samples[i].0;
            let (_, z) = model(p, s);
            let e = (-0.5 * z * z).exp();
            match k {
                0 => 1.0,
                1 => e,
                2 => p[1] * e * z / p[3],
                _ => p[1] * e * z * z / p[3],
            }
        })
    };
    let p0 = DVector::from_vec(vec![guess.offset, guess.amplitude, 0.0, guess.sigma_px]);
    let r = minimize(res, Some(jac), p0, &LmOptions::default())?;
    let p = r.params;
    if !(p[3].is_finite() && p[3] != 0.0 && p[1] > 0.0) {
        return Err(Error::Fit("profile fit collapsed".into()));
    }
    Ok(Profile1d {
        offset: p[0],
        amplitude: p[1],
        sigma_px: p[3].abs(),
    })
}

/// Samples the frame along `dir` through `(cx, cy)` at one-pixel spacing.
fn profile(img: &IntensityImage, cx: f64, cy: f64, dir: (f64, f64)) -> Vec<(f64, f64)> {
    let reach = (img.width + img.height) as i64;
    (-reach..=reach)
        .filter_map(|k| {
            let s = k as f64;
            img.bilinear(cx + s * dir.0, cy + s * dir.1).map(|v| (s, v))
        })
        .collect()
}

/// Fits the dominant spot in `img`.
pub fn fit_spot(img: &IntensityImage) -> Result<SpotFit> {
    if img.width < 8 || img.height < 8 {
        return Err(Error::Fit(format!(
            "image is {}x{}, fitting needs at least 8x8",
            img.width, img.height
        )));
    }
    let bg = median(&img.values);
    let peak = img.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > DOMINANCE_RATIO * bg) || peak <= 0.0 {
        return Err(Error::Fit(format!(
            "no dominant peak: max {peak} vs median {bg}"
        )));
    }
    if let Some(sat) = img.saturation_level {
        let clipped = img.values.iter().filter(|&&v| v >= sat).count();
        if clipped > MAX_CLIPPED {
            return Err(Error::Fit(format!("saturated core: {clipped} pixels at full scale")));
        }
    }

    let floor = MOMENT_FLOOR * (peak - bg);
    let (mut w0, mut mx, mut my) = (0.0, 0.0, 0.0);
    let mut total = 0.0;
    for y in 0..img.height {
        for x in 0..img.width {
            let w = img.at(x, y) - bg;
            if w > 0.0 {
                total += w;
            }
            if w >= floor {
                w0 += w;
                mx += w * x as f64;
                my += w * y as f64;
            }
        }
    }
    let (cx, cy) = (mx / w0, my / w0);
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for y in 0..img.height {
        for x in 0..img.width {
            let w = img.at(x, y) - bg;
            if w >= floor {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                cxx += w * dx * dx;
                cxy += w * dx * dy;
                cyy += w * dy * dy;
            }
        }
    }
    let (cxx, cxy, cyy) = (cxx / w0, cxy / w0, cyy / w0);
    let mut theta = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
    let tr = cxx + cyy;
    let disc = ((cxx - cyy).powi(2) / 4.0 + cxy * cxy).sqrt();
    let (l1, l2) = (tr / 2.0 + disc, (tr / 2.0 - disc).max(0.0));
    // Moments of a Gaussian truncated at `floor` shrink uniformly by this factor.
    let q = MOMENT_FLOOR;
    let shrink = 1.0 + q * q.ln() / (1.0 - q);
    let guess_sigma = |l: f64| (l / shrink).sqrt().max(0.5);

    let (s, c) = theta.sin_cos();
    let major = fit_profile(
        &profile(img, cx, cy, (c, s)),
        Profile1d {
            offset: bg,
            amplitude: peak - bg,
            sigma_px: guess_sigma(l1),
        },
    )?;
    let minor = fit_profile(
        &profile(img, cx, cy, (-s, c)),
        Profile1d {
            offset: bg,
            amplitude: peak - bg,
            sigma_px: guess_sigma(l2),
        },
    )?;
    let (mut sa, mut sb) = (major.sigma_px, minor.sigma_px);
    if sb > sa {
        std::mem::swap(&mut sa, &mut sb);
        theta += std::f64::consts::FRAC_PI_2;
    }
    if theta > std::f64::consts::FRAC_PI_2 {
        theta -= std::f64::consts::PI;
    } else if theta <= -std::f64::consts::FRAC_PI_2 {
        theta += std::f64::consts::PI;
    }
    let extent = img.width.max(img.height) as f64;
    if sa > extent {
        return Err(Error::Fit("fitted width exceeds the frame".into()));
    }
    let pitch = img.pixel_pitch_um;
    let spot = BeamSpot {
        center: Vec2::new(cx * pitch * 1e-3, cy * pitch * 1e-3),
        sigma_major_um: sa * pitch,
        sigma_minor_um: sb * pitch,
        orientation: theta,
        total_power: total,
        wavelength_nm: f64::NAN,
    };
    Ok(SpotFit {
        spot,
        diameter_major_um: 4.0 * spot.sigma_major_um,
        diameter_minor_um: 4.0 * spot.sigma_minor_um,
        background: 0.5 * (major.offset + minor.offset),
        amplitude: 0.5 * (major.amplitude + minor.amplitude),
    })
}
