//! Grayscale camera frames and the binary PGM (P5) format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Row-major frame with square pixels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntensityImage {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch_um: f64,
    pub values: Vec<f64>,
    /// Sensor full-scale value, when known; pixels at this level are clipped.
    pub saturation_level: Option<f64>,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize, pixel_pitch_um: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::invalid(
                "values",
                format!("{} values for a {width}x{height} image", values.len()),
            ));
        }
        if !(pixel_pitch_um.is_finite() && pixel_pitch_um > 0.0) {
            return Err(Error::invalid("pixel_pitch_um", "must be > 0"));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("values", format!("pixel {i} is negative or not finite")));
        }
        Ok(Self {
            width,
            height,
            pixel_pitch_um,
            values,
            saturation_level: None,
        })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Bilinear sample at fractional pixel coordinates; `None` outside.
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width - 2);
        let y0 = (y.floor() as usize).min(self.height - 2);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let a = self.at(x0, y0) * (1.0 - fx) + self.at(x0 + 1, y0) * fx;
        let b = self.at(x0, y0 + 1) * (1.0 - fx) + self.at(x0 + 1, y0 + 1) * fx;
        Some(a * (1.0 - fy) + b * fy)
    }
}

fn pgm_err(message: impl Into<String>) -> Error {
    Error::Parse {
        line: 1,
        column: 1,
        message: message.into(),
    }
}

/// Parses a binary PGM. 8-bit and 16-bit (big-endian) samples are accepted;
/// `maxval` becomes the saturation level.
pub fn parse_pgm(bytes: &[u8], pixel_pitch_um: f64) -> Result<IntensityImage> {
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(pgm_err("truncated PGM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace before the raster
    if tokens[0] != "P5" {
        return Err(pgm_err(format!("expected P5 magic, found `{}`", tokens[0])));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| pgm_err(format!("bad {what} `{s}`")));
    let (w, h, maxval) = (num(&tokens[1], "width")?, num(&tokens[2], "height")?, num(&tokens[3], "maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(pgm_err("invalid PGM dimensions or maxval"));
    }
    let bps = if maxval > 255 { 2 } else { 1 };
    let need = w * h * bps;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| {
        pgm_err(format!(
            "raster holds {} bytes, expected {need}",
            bytes.len().saturating_sub(pos)
        ))
    })?;
    let values = if bps == 2 {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    } else {
        raster.iter().map(|&b| b as f64).collect()
    };
    let mut img = IntensityImage::new(w, h, pixel_pitch_um, values)?;
    img.saturation_level = Some(maxval as f64);
    Ok(img)
}

/// Pixel pitch sidecar for `image.pgm` is `image.pgm.pitch` holding μm.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".pitch");
    PathBuf::from(s)
}

/// Loads a PGM; the pitch comes from `pitch_um` or else the sidecar file.
pub fn load_pgm(path: impl AsRef<Path>, pitch_um: Option<f64>) -> Result<IntensityImage> {
    let path = path.as_ref();
    let pitch = match pitch_um {
        Some(p) => p,
        None => {
            let side = sidecar_path(path);
            let text = fs::read_to_string(&side)
                .map_err(|e| Error::invalid("pixel_pitch_um", format!("no pitch given and {}: {e}", side.display())))?;
            text.trim()
                .parse()
                .map_err(|_| Error::invalid("pixel_pitch_um", format!("{} does not hold a number", side.display())))?
        }
    };
    parse_pgm(&fs::read(path)?, pitch)
}

/// Encodes as 16-bit P5, rounding and clamping to `[0, 65535]`.
pub fn encode_pgm16(img: &IntensityImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    for v in &img.values {
        out.extend_from_slice(&(v.round().clamp(0.0, 65535.0) as u16).to_be_bytes());
    }
    out
}

/// Writes the PGM and its pitch sidecar.
pub fn save_pgm(img: &IntensityImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm16(img))?;
    fs::write(sidecar_path(path), format!("{}\n", img.pixel_pitch_um))?;
    Ok(())
}

/// Parameters of a synthetic elliptical Gaussian frame.
#[derive(Debug, Clone, Copy)]
pub struct GaussianFrame {
    pub width: usize,
    pub height: usize,
    pub pitch_um: f64,
    /// Centre in pixel coordinates.
    pub cx: f64,
    pub cy: f64,
    pub sigma_major_um: f64,
    pub sigma_minor_um: f64,
    /// Major-axis angle from +x (image columns), radians.
    pub orientation: f64,
    pub amplitude: f64,
    pub offset: f64,
}

/// Renders a point-sampled Gaussian; `noise(i)` is added to pixel `i` and
/// the result clamped at zero.
pub fn render_gaussian(g: &GaussianFrame, mut noise: impl FnMut(usize) -> f64) -> IntensityImage {
    let (s, c) = g.orientation.sin_cos();
    let sa = g.sigma_major_um / g.pitch_um;
    let sb = g.sigma_minor_um / g.pitch_um;
    let mut values = Vec::with_capacity(g.width * g.height);
    for y in 0..g.height {
        for x in 0..g.width {
            let dx = x as f64 - g.cx;
            let dy = y as f64 - g.cy;
            let a = dx * c + dy * s;
            let b = -dx * s + dy * c;
            let v = g.offset + g.amplitude * (-0.5 * (a * a / (sa * sa) + b * b / (sb * sb))).exp();
            let i = values.len();
            values.push((v + noise(i)).max(0.0));
        }
    }
    IntensityImage {
        width: g.width,
        height: g.height,
        pixel_pitch_um: g.pitch_um,
        values,
        saturation_level: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_16bit() {
        let vals: Vec<f64> = (0..12).map(|i| (i * 5000) as f64).collect();
        let img = IntensityImage::new(4, 3, 5.5, vals.clone()).unwrap();
        let back = parse_pgm(&encode_pgm16(&img), 5.5).unwrap();
        assert_eq!(back.values, vals);
        assert_eq!(back.saturation_level, Some(65535.0));
    }

    #[test]
    fn pgm_header_comments_and_8bit() {
        let mut b = b"P5\n# camera\n2 2\n255\n".to_vec();
        b.extend_from_slice(&[0, 10, 200, 255]);
        let img = parse_pgm(&b, 1.0).unwrap();
        assert_eq!(img.values, vec![0.0, 10.0, 200.0, 255.0]);
    }

    #[test]
    fn truncated_raster_rejected() {
        let mut b = b"P5 4 4 255\n".to_vec();
        b.extend_from_slice(&[1; 10]);
        assert!(matches!(parse_pgm(&b, 1.0), Err(Error::Parse { .. })));
        assert!(parse_pgm(b"P2 1 1 255\n0", 1.0).is_err());
    }

    #[test]
    fn bilinear_is_exact_on_planes() {
        let vals: Vec<f64> = (0..25).map(|i| ((i % 5) * 2 + (i / 5) * 3) as f64).collect();
        let img = IntensityImage::new(5, 5, 1.0, vals).unwrap();
        let v = img.bilinear(1.25, 3.5).unwrap();
        assert!((v - (2.5 + 10.5)).abs() < 1e-12);
        assert!(img.bilinear(4.0, 4.0).is_some());
        assert!(img.bilinear(4.01, 0.0).is_none());
    }
}
