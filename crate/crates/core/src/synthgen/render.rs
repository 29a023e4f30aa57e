use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spec::{EntrySide, Shape, SynthClipSpec};
use crate::clipstore::{Label, SegmentationPolicy};
use crate::error::{Error, Result};
use crate::frames::{FrameVolume, Image};

/// Pixel box `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }

    /// Box scaled from a `from` frame size to a `to` frame size, rounded outward.
    pub fn rescale(&self, from: (usize, usize), to: (usize, usize)) -> BBox {
        let sy = to.0 as f64 / from.0 as f64;
        let sx = to.1 as f64 / from.1 as f64;
        BBox {
            x0: (self.x0 as f64 * sx).floor() as usize,
            y0: (self.y0 as f64 * sy).floor() as usize,
            x1: ((self.x1 as f64 * sx).ceil() as usize).min(to.1),
            y1: ((self.y1 as f64 * sy).ceil() as usize).min(to.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameBox {
    pub frame: usize,
    #[serde(flatten)]
    pub bbox: BBox,
}

/// Ground truth of one synthetic clip: its label and the intruder box in
/// every frame where the intruder is visible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: Label,
    pub intruder_bboxes: Vec<FrameBox>,
}

impl GroundTruth {
    pub fn bbox_at(&self, frame: usize) -> Option<BBox> {
        self.intruder_bboxes
            .binary_search_by_key(&frame, |b| b.frame)
            .ok()
            .map(|i| self.intruder_bboxes[i].bbox)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn hash2(seed: u64, x: i64, y: i64) -> f32 {
    let mut z = seed
        ^ (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 40) as f32 / (1u64 << 24) as f32
}

fn value_noise(seed: u64, x: f32, y: f32, cell: f32) -> f32 {
    let (fx, fy) = (x / cell, y / cell);
    let (ix, iy) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - ix, fy - iy);
    let s = |t: f32| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (s(tx), s(ty));
    let (ix, iy) = (ix as i64, iy as i64);
    let a = hash2(seed, ix, iy);
    let b = hash2(seed, ix + 1, iy);
    let c = hash2(seed, ix, iy + 1);
    let d = hash2(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bot = c + (d - c) * sx;
    top + (bot - top) * sy
}

/// Renders frames of one clip on demand.
#[derive(Clone, Debug)]
pub struct Renderer {
    spec: SynthClipSpec,
    texture: Vec<f32>,
    tex_width: usize,
    tex_origin: f64,
    horizon: usize,
}

impl Renderer {
    pub fn new(spec: &SynthClipSpec) -> Result<Self> {
        spec.validate()?;
        let (h, w) = spec.resolution;
        let span = (spec.background.drift_px_per_s.abs() * spec.duration_s).ceil() as usize + 2;
        let tex_width = w + span;
        let seed = spec.background.texture_seed;
        let scale = w.max(h) as f32 / 112.0;
        let mut texture = vec![0.0; h * tex_width];
        for y in 0..h {
            for x in 0..tex_width {
                let (fx, fy) = (x as f32, y as f32);
                texture[y * tex_width + x] = 0.5 * value_noise(seed, fx, fy, 16.0 * scale)
                    + 0.3 * value_noise(seed ^ 1, fx, fy, 7.0 * scale)
                    + 0.2 * value_noise(seed ^ 2, fx, fy, 3.0 * scale);
            }
        }
        let tex_origin = if spec.background.drift_px_per_s < 0.0 { (span - 1) as f64 } else { 0.0 };
        Ok(Self {
            spec: spec.clone(),
            texture,
            tex_width,
            tex_origin,
            horizon: (h as f64 * 0.35).round() as usize,
        })
    }

    pub fn spec(&self) -> &SynthClipSpec {
        &self.spec
    }

    pub fn n_frames(&self) -> usize {
        self.spec.n_frames()
    }

    /// Intruder box in frame `i`, if visible.
    pub fn bbox_at(&self, i: usize) -> Option<BBox> {
        let intr = self.spec.intruder.as_ref()?;
        let t = i as f64 / self.spec.fps;
        if t + 1e-9 < intr.onset_s {
            return None;
        }
        let (h, w) = self.spec.resolution;
        let (bh, bw) = intr.bbox_size;
        let travel_x = (w - bw) as f64 / 2.0;
        let travel_y = (h - bh) as f64 / 2.0;
        let moved = |limit: f64| (intr.speed_px_per_s * (t - intr.onset_s).max(0.0)).min(limit);
        let (x0, y0) = match intr.entry_side {
            EntrySide::Left => (moved(travel_x), travel_y + intr.cross_offset_px),
            EntrySide::Right => ((w - bw) as f64 - moved(travel_x), travel_y + intr.cross_offset_px),
            EntrySide::Top => (travel_x + intr.cross_offset_px, moved(travel_y)),
        };
        let x0 = (x0.round().max(0.0) as usize).min(w - bw);
        let y0 = (y0.round().max(0.0) as usize).min(h - bh);
        Some(BBox {
            x0,
            y0,
            x1: x0 + bw,
            y1: y0 + bh,
        })
    }

    fn background(&self, y: usize, x: usize, shift: f64) -> [f32; 3] {
        let sx = (x as f64 + shift + self.tex_origin).clamp(0.0, (self.tex_width - 1) as f64);
        let x0 = sx.floor() as usize;
        let x1 = (x0 + 1).min(self.tex_width - 1);
        let f = (sx - x0 as f64) as f32;
        let row = &self.texture[y * self.tex_width..(y + 1) * self.tex_width];
        let v = row[x0] * (1.0 - f) + row[x1] * f;
        if y < self.horizon {
            [0.45 + 0.2 * v, 0.55 + 0.2 * v, 0.75 + 0.15 * v]
        } else {
            let g = 0.2 + 0.4 * v;
            [g * 0.96, g * 0.98, g * 1.04]
        }
    }

    pub fn render_frame(&self, i: usize) -> Image {
        let (h, w) = self.spec.resolution;
        let shift = self.spec.background.drift_px_per_s * i as f64 / self.spec.fps;
        let mut img = Image::new(h, w, 3);
        for y in 0..h {
            for x in 0..w {
                let c = self.background(y, x, shift);
                for (k, v) in c.into_iter().enumerate() {
                    img.set(y, x, k, v);
                }
            }
        }
        if let (Some(b), Some(intr)) = (self.bbox_at(i), self.spec.intruder.as_ref()) {
            let (bh, bw) = (b.y1 - b.y0, b.x1 - b.x0);
            let (cy, cx) = ((bh as f32 - 1.0) / 2.0, (bw as f32 - 1.0) / 2.0);
            for dy in 0..bh {
                for dx in 0..bw {
                    let ny = (dy as f32 - cy) / (bh as f32 / 2.0);
                    let nx = (dx as f32 - cx) / (bw as f32 / 2.0);
                    let (inside, edge) = match intr.shape {
                        Shape::Rectangle => (true, dy == 0 || dx == 0 || dy + 1 == bh || dx + 1 == bw),
                        Shape::Ellipse => {
                            let r = nx * nx + ny * ny;
                            (r <= 1.0, r > 0.6)
                        }
                    };
                    if inside {
                        let shade = if edge { 0.6 } else { 1.0 - 0.15 * ny.max(0.0) };
                        for k in 0..3 {
                            img.set(b.y0 + dy, b.x0 + dx, k, intr.color[k] * shade);
                        }
                    }
                }
            }
        }
        img
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            label: self.spec.label,
            intruder_bboxes: (0..self.n_frames())
                .filter_map(|i| self.bbox_at(i).map(|bbox| FrameBox { frame: i, bbox }))
                .collect(),
        }
    }
}

/// Render a whole clip and its ground truth.
pub fn generate_clip(spec: &SynthClipSpec) -> Result<(FrameVolume, GroundTruth)> {
    let r = Renderer::new(spec)?;
    let frames = (0..r.n_frames()).map(|i| r.render_frame(i)).collect();
    Ok((FrameVolume::from_frames(frames)?, r.ground_truth()))
}

/// Mean absolute frame difference inside the near-miss window minus the
/// same quantity inside the safe window.
pub fn motion_energy_score(frames: &FrameVolume, fps: f64, policy: &SegmentationPolicy) -> f64 {
    let energy = |range: std::ops::Range<usize>| {
        let n = frames.frame_len();
        let d = frames.data();
        let mut total = 0.0f64;
        let mut count = 0usize;
        for t in range.start + 1..range.end {
            let (a, b) = (&d[(t - 1) * n..t * n], &d[t * n..(t + 1) * n]);
            total += a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / n as f64;
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    };
    let nf = frames.frames();
    energy(policy.nearmiss_window.frame_range(fps, nf)) - energy(policy.safe_window.frame_range(fps, nf))
}
