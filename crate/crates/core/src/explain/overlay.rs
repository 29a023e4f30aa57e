use super::saliency::resample;
use crate::error::{Error, Result};
use crate::frames::Image;

/// Fixed "jet" colormap: piecewise linear through dark blue (0), blue
/// (0.125), cyan (0.375), yellow (0.625), red (0.875) and dark red (1).
/// Inputs are clamped to `[0, 1]`.
pub fn colormap(v: f64) -> [f32; 3] {
    const STOPS: [(f64, [f64; 3]); 6] = [
        (0.0, [0.0, 0.0, 0.5]),
        (0.125, [0.0, 0.0, 1.0]),
        (0.375, [0.0, 1.0, 1.0]),
        (0.625, [1.0, 1.0, 0.0]),
        (0.875, [1.0, 0.0, 0.0]),
        (1.0, [0.5, 0.0, 0.0]),
    ];
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let i = STOPS.iter().rposition(|(s, _)| *s <= v).unwrap_or(0).min(STOPS.len() - 2);
    let ((a, ca), (b, cb)) = (STOPS[i], STOPS[i + 1]);
    let t = (v - a) / (b - a);
    [0, 1, 2].map(|k| (ca[k] + (cb[k] - ca[k]) * t) as f32)
}

/// Blend the colormapped heatmap (`h × w`, resampled to the frame) onto an
/// RGB frame: `out = (1 - opacity) · frame + opacity · colormap(heat)`.
pub fn render_overlay(frame: &Image, heat: &[f64], h: usize, w: usize, opacity: f64) -> Result<Image> {
    if !(0.0..=1.0).contains(&opacity) {
        return Err(Error::Invalid(format!("opacity {opacity} outside [0, 1]")));
    }
    if frame.channels != 3 {
        return Err(Error::Shape(format!("overlay needs an RGB frame, got {} channels", frame.channels)));
    }
    if heat.len() != h * w || h == 0 || w == 0 {
        return Err(Error::Shape(format!("heatmap has {} cells, not {h}x{w}", heat.len())));
    }
    let up = resample(heat, h, w, frame.height, frame.width);
    if up.len() != frame.height * frame.width {
        return Err(Error::Shape("resampled heatmap does not match the frame".into()));
    }
    let a = opacity as f32;
    let mut out = frame.clone();
    for (p, &v) in up.iter().enumerate() {
        let c = colormap(v);
        for k in 0..3 {
            let o = &mut out.data[p * 3 + k];
            *o = (1.0 - a) * *o + a * c[k];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_opacity_is_identity() {
        let mut f = Image::new(5, 7, 3);
        for (i, v) in f.data.iter_mut().enumerate() {
            *v = (i % 11) as f32 / 10.0;
        }
        let o = render_overlay(&f, &[1.0, 0.0, 0.5, 0.2], 2, 2, 0.0).unwrap();
        assert_eq!(o, f);
    }

    #[test]
    fn full_opacity_zero_heat_is_colormap_minimum() {
        let f = Image::filled(4, 4, 3, 1.0);
        let o = render_overlay(&f, &[0.0; 4], 2, 2, 1.0).unwrap();
        for px in o.data.chunks(3) {
            assert_eq!(px, colormap(0.0));
        }
        assert_eq!(colormap(0.0), [0.0, 0.0, 0.5]);
    }

    #[test]
    fn keeps_frame_dimensions() {
        let f = Image::new(720, 1280, 3);
        let o = render_overlay(&f, &[0.3; 49], 7, 7, 0.5).unwrap();
        assert_eq!((o.height, o.width), (720, 1280));
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = Image::new(4, 4, 3);
        assert!(render_overlay(&f, &[0.0; 3], 2, 2, 0.5).is_err());
        assert!(render_overlay(&f, &[0.0; 4], 2, 2, 1.5).is_err());
        assert!(render_overlay(&Image::new(4, 4, 1), &[0.0; 4], 2, 2, 0.5).is_err());
    }

    #[test]
    fn colormap_is_continuous_at_stops() {
        for s in [0.125, 0.375, 0.625, 0.875] {
            let (a, b) = (colormap(s - 1e-9), colormap(s + 1e-9));
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-6);
            }
        }
    }
}
