use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clipstore::{Label, SegmentationPolicy};
use crate::error::{Error, Result};

/// Minimum ratio of intruder speed to background drift speed.
pub const MIN_SPEED_RATIO: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntrySide {
    Left,
    Right,
    Top,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rectangle,
    Ellipse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intruder {
    pub onset_s: f64,
    pub speed_px_per_s: f64,
    /// `(height, width)` in pixels.
    pub bbox_size: (usize, usize),
    pub entry_side: EntrySide,
    /// Offset of the path from the frame centre line, perpendicular to the
    /// direction of travel, in pixels.
    pub cross_offset_px: f64,
    pub shape: Shape,
    pub color: [f32; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub texture_seed: u64,
    /// Horizontal drift; the sign gives the direction.
    pub drift_px_per_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthClipSpec {
    pub seed: u64,
    pub duration_s: f64,
    pub fps: f64,
    /// `(height, width)`.
    pub resolution: (usize, usize),
    pub label: Label,
    pub intruder: Option<Intruder>,
    pub background: Background,
}

impl SynthClipSpec {
    /// Draw a spec with the default parameter ranges: onset in
    /// `[5.5, 9.0]` s, travel to the centre line in `[0.8, 1.6]` s, sprite
    /// about a fifth of the frame, drift `[0.01, 0.03]` frame widths per second.
    pub fn draw(seed: u64, label: Label, resolution: (usize, usize), fps: f64, duration_s: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = resolution;
        let drift = rng.random_range(0.01..=0.03) * w as f64 * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let background = Background {
            texture_seed: rng.random(),
            drift_px_per_s: drift,
        };
        let intruder = (label == Label::NearMiss).then(|| {
            let bh = ((h as f64 * rng.random_range(0.18..=0.26)).round() as usize).clamp(2, h);
            let bw = ((w as f64 * rng.random_range(0.24..=0.34)).round() as usize).clamp(2, w);
            let entry_side = match rng.random_range(0..3) {
                0 => EntrySide::Left,
                1 => EntrySide::Right,
                _ => EntrySide::Top,
            };
            let (travel, slack) = match entry_side {
                EntrySide::Left | EntrySide::Right => ((w - bw) as f64 / 2.0, (h - bh) as f64 / 2.0),
                EntrySide::Top => ((h - bh) as f64 / 2.0, (w - bw) as f64 / 2.0),
            };
            let travel_s = rng.random_range(0.8..=1.6);
            let palette = [[0.85, 0.1, 0.1], [0.95, 0.8, 0.1], [0.1, 0.3, 0.9], [0.95, 0.95, 0.95], [0.1, 0.75, 0.3]];
            Intruder {
                onset_s: rng.random_range(5.5..=9.0),
                speed_px_per_s: (travel / travel_s).max(MIN_SPEED_RATIO * drift.abs() * 1.01),
                bbox_size: (bh, bw),
                entry_side,
                cross_offset_px: rng.random_range(-0.6..=0.6) * slack,
                shape: if rng.random::<bool>() { Shape::Rectangle } else { Shape::Ellipse },
                color: palette[rng.random_range(0..palette.len())],
            }
        });
        Self {
            seed,
            duration_s,
            fps,
            resolution,
            label,
            intruder,
            background,
        }
    }

    pub fn n_frames(&self) -> usize {
        (self.fps * self.duration_s).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.resolution;
        if h == 0 || w == 0 {
            return Err(Error::Invalid("resolution must be positive".into()));
        }
        if !(self.fps > 0.0 && self.duration_s > 0.0 && self.fps.is_finite() && self.duration_s.is_finite()) {
            return Err(Error::Invalid("fps and duration must be positive".into()));
        }
        if !self.background.drift_px_per_s.is_finite() {
            return Err(Error::Invalid("background drift must be finite".into()));
        }
        let nm = SegmentationPolicy::default().nearmiss_window;
        match (&self.intruder, self.label) {
            (None, Label::SafeDriving) => Ok(()),
            (Some(_), Label::SafeDriving) => Err(Error::Invalid("safe-driving clip must not have an intruder".into())),
            (None, Label::NearMiss) => Err(Error::Invalid("near-miss clip needs an intruder".into())),
            (Some(i), Label::NearMiss) => {
                if !nm.contains(i.onset_s) || i.onset_s > self.duration_s {
                    return Err(Error::Invalid(format!(
                        "intruder onset {} s outside the near-miss window {nm}",
                        i.onset_s
                    )));
                }
                let (bh, bw) = i.bbox_size;
                if bh == 0 || bw == 0 || bh > h || bw > w {
                    return Err(Error::Invalid(format!(
                        "intruder bbox {bh}x{bw} does not fit a {h}x{w} frame"
                    )));
                }
                if !(i.speed_px_per_s.is_finite() && i.speed_px_per_s > 0.0) {
                    return Err(Error::Invalid("intruder speed must be positive".into()));
                }
                if i.speed_px_per_s < MIN_SPEED_RATIO * self.background.drift_px_per_s.abs() {
                    return Err(Error::Invalid(format!(
                        "intruder speed {} px/s is below {MIN_SPEED_RATIO}x the drift of {} px/s",
                        i.speed_px_per_s, self.background.drift_px_per_s
                    )));
                }
                let slack = match i.entry_side {
                    EntrySide::Left | EntrySide::Right => (h - bh) as f64 / 2.0,
                    EntrySide::Top => (w - bw) as f64 / 2.0,
                };
                if i.cross_offset_px.abs() > slack + 1e-9 {
                    return Err(Error::Invalid(format!(
                        "intruder path offset {} px leaves the frame (limit {slack} px)",
                        i.cross_offset_px
                    )));
                }
                Ok(())
            }
        }
    }
}
