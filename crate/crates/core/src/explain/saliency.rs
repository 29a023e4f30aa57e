use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cells at or below this magnitude below zero are treated as rounding noise
/// and clamped; anything more negative is rejected.
const NEGATIVE_TOLERANCE: f64 = 1e-12;

/// External gaze-saliency map, normalized to sum 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub source: String,
}

impl SaliencyMap {
    /// Validate and normalize raw non-negative cells.
    pub fn from_raw(height: usize, width: usize, mut data: Vec<f64>, source: impl Into<String>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Invalid(format!(
                "saliency map {height}x{width} with {} cells",
                data.len()
            )));
        }
        for (i, v) in data.iter_mut().enumerate() {
            if !v.is_finite() || *v < -NEGATIVE_TOLERANCE {
                return Err(Error::Invalid(format!(
                    "saliency cell ({}, {}) is {v}; cells must be finite and non-negative",
                    i / width,
                    i % width
                )));
            }
            *v = v.max(0.0);
        }
        let sum: f64 = data.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Invalid("saliency map is zero everywhere".into()));
        }
        data.iter_mut().for_each(|v| *v /= sum);
        Ok(Self {
            height,
            width,
            data,
            source: source.into(),
        })
    }

    pub fn resampled(&self, height: usize, width: usize) -> Vec<f64> {
        resample(&self.data, self.height, self.width, height, width)
    }
}

/// Bilinear resampling of a row-major grid with half-pixel centers.
pub fn resample(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w, "grid size");
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let mut out = vec![0.0; oh * ow];
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    for y in 0..oh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for x in 0..ow {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
            let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
            out[y * ow + x] = top * (1.0 - wy) + bot * wy;
        }
    }
    out
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png")
    )
}

/// Load a gaze map from a grayscale PNG or a whitespace/comma separated
/// numeric grid (one row per line, `#` comments allowed).
pub fn load_saliency(path: &Path) -> Result<SaliencyMap> {
    let source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if is_image(path) {
        let img = image::open(path)
            .map_err(|e| Error::format(path, format!("not a decodable grayscale image: {e}")))?
            .into_luma16();
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
        return SaliencyMap::from_raw(h as usize, w as usize, data, source)
            .map_err(|e| Error::format(path, e.to_string()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e} (expected a numeric grid or PNG)", ln + 1)))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::format(
                    path,
                    format!("line {}: {} columns, first row has {}", ln + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let h = rows.len();
    let w = rows.first().map_or(0, |r| r.len());
    SaliencyMap::from_raw(h, w, rows.concat(), source).map_err(|e| Error::format(path, e.to_string()))
}

/// 8-bit grayscale PNG, scaled so the largest cell is 255.
pub fn save_saliency_png(path: &Path, height: usize, width: usize, data: &[f64]) -> Result<()> {
    let max = data.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let bytes: Vec<u8> = data.iter().map(|v| (v * scale).round().clamp(0.0, 255.0) as u8).collect();
    image::GrayImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| Error::Invalid(format!("grid of {} cells is not {height}x{width}", data.len())))?
        .save(path)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Numeric text grid readable by [`load_saliency`].
pub fn save_grid(path: &Path, height: usize, width: usize, data: &[f64]) -> Result<()> {
    if data.len() != height * width {
        return Err(Error::Invalid(format!("grid of {} cells is not {height}x{width}", data.len())));
    }
    let mut s = String::new();
    for row in data.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Isotropic Gaussian blob centred at `(cy, cx)` (fractions of the frame),
/// standing in for an external gaze model's output.
pub fn gaussian_gaze(height: usize, width: usize, center: (f64, f64), sigma_frac: f64) -> SaliencyMap {
    let s = sigma_frac * height.max(width) as f64;
    let (cy, cx) = (center.0 * height as f64, center.1 * width as f64);
    let data = (0..height * width)
        .map(|i| {
            let (y, x) = ((i / width) as f64 + 0.5, (i % width) as f64 + 0.5);
            (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp()
        })
        .collect();
    SaliencyMap::from_raw(height, width, data, "synthetic-gaussian").expect("gaussian is positive")
}
