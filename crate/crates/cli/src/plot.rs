//! Minimal PNG line charts (no text; the data also goes to CSV).

use std::path::Path;

use image::{Rgb, RgbImage};
use nearmiss_core::{Error, Result};

pub struct Series<'a> {
    pub points: &'a [(f64, f64)],
    pub color: [u8; 3],
}

const MARGIN: u32 = 32;
const GRID_LINES: u32 = 5;

fn bounds(series: &[Series]) -> Option<(f64, f64, f64, f64)> {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return None;
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    Some((x0, x1, y0 - pad, y1 + pad))
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
    }
}

/// Render the series on shared axes with light grid lines.
pub fn line_chart(path: &Path, width: u32, height: u32, series: &[Series]) -> Result<()> {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let (pw, ph) = ((width - 2 * MARGIN) as f64, (height - 2 * MARGIN) as f64);
    let grid = Rgb([225, 225, 225]);
    for k in 0..=GRID_LINES {
        let f = k as f64 / GRID_LINES as f64;
        let (gx, gy) = (MARGIN as f64 + f * pw, MARGIN as f64 + f * ph);
        line(&mut img, (gx, MARGIN as f64), (gx, MARGIN as f64 + ph), grid);
        line(&mut img, (MARGIN as f64, gy), (MARGIN as f64 + pw, gy), grid);
    }
    let axis = Rgb([40, 40, 40]);
    line(&mut img, (MARGIN as f64, MARGIN as f64), (MARGIN as f64, MARGIN as f64 + ph), axis);
    line(&mut img, (MARGIN as f64, MARGIN as f64 + ph), (MARGIN as f64 + pw, MARGIN as f64 + ph), axis);

    if let Some((x0, x1, y0, y1)) = bounds(series) {
        let map = |(x, y): (f64, f64)| {
            (
                MARGIN as f64 + (x - x0) / (x1 - x0) * pw,
                MARGIN as f64 + (1.0 - (y - y0) / (y1 - y0)) * ph,
            )
        };
        for s in series {
            let c = Rgb(s.color);
            let pts: Vec<(f64, f64)> = s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).map(|&p| map(p)).collect();
            if pts.len() == 1 {
                line(&mut img, pts[0], pts[0], c);
            }
            for w in pts.windows(2) {
                line(&mut img, w[0], w[1], c);
            }
        }
    }
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}
