//! Decoded video frames, in `(T, H, W, C)` order with values in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameVolume {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FrameVolume {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {frames}x{height}x{width}x{channels} frame volume",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
            data: vec![0.0; frames * height * width * channels],
        }
    }

    /// Stack single frames (each `H × W × C`) into a volume.
    pub fn from_frames(frames: Vec<Image>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Invalid("cannot build a frame volume from zero frames".into()))?;
        let (h, w, c) = (first.height, first.width, first.channels);
        let mut data = Vec::with_capacity(frames.len() * h * w * c);
        for (i, f) in frames.iter().enumerate() {
            if (f.height, f.width, f.channels) != (h, w, c) {
                return Err(Error::Shape(format!(
                    "frame {i} is {}x{}x{}, expected {h}x{w}x{c}",
                    f.height, f.width, f.channels
                )));
            }
            data.extend_from_slice(&f.data);
        }
        Self::new(frames.len(), h, w, c, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn frame(&self, t: usize) -> Image {
        let n = self.frame_len();
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data[t * n..(t + 1) * n].to_vec(),
        }
    }

    /// Keep only the listed frames, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let n = self.frame_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &t in indices {
            if t >= self.frames {
                return Err(Error::Invalid(format!("frame {t} out of range ({} frames)", self.frames)));
            }
            data.extend_from_slice(&self.data[t * n..(t + 1) * n]);
        }
        Self::new(indices.len(), self.height, self.width, self.channels, data)
    }

    pub fn map_frames(&self, mut f: impl FnMut(&Image) -> Image) -> Result<Self> {
        Self::from_frames((0..self.frames).map(|t| f(&self.frame(t))).collect())
    }
}

/// One frame, `H × W × C`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, v: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![v; height * width * channels],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Bilinear resize with half-pixel centers.
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = Image::new(height, width, self.channels);
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        for y in 0..height {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f32;
            for x in 0..width {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f32;
                for c in 0..self.channels {
                    let top = self.get(y0, x0, c) * (1.0 - wx) + self.get(y0, x1, c) * wx;
                    let bot = self.get(y1, x0, c) * (1.0 - wx) + self.get(y1, x1, c) * wx;
                    out.set(y, x, c, top * (1.0 - wy) + bot * wy);
                }
            }
        }
        out
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Invalid(format!(
                "crop {height}x{width}@({top},{left}) exceeds {}x{} frame",
                self.height, self.width
            )));
        }
        let mut out = Image::new(height, width, self.channels);
        for y in 0..height {
            let src = ((top + y) * self.width + left) * self.channels;
            let dst = y * width * self.channels;
            out.data[dst..dst + width * self.channels]
                .copy_from_slice(&self.data[src..src + width * self.channels]);
        }
        Ok(out)
    }
}

/// Frames for both pathways of one sample. The slow frames are a strided
/// subset of the fast frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    pub slow: FrameVolume,
    pub fast: FrameVolume,
}

impl FramePair {
    pub fn new(slow: FrameVolume, fast: FrameVolume, alpha: usize) -> Result<Self> {
        if fast.frames() != alpha * slow.frames() {
            return Err(Error::Shape(format!(
                "fast pathway has {} frames, expected alpha({alpha}) x {} slow frames",
                fast.frames(),
                slow.frames()
            )));
        }
        if (slow.height(), slow.width(), slow.channels()) != (fast.height(), fast.width(), fast.channels()) {
            return Err(Error::Shape(format!(
                "slow frames are {}x{}x{} but fast frames are {}x{}x{}",
                slow.height(),
                slow.width(),
                slow.channels(),
                fast.height(),
                fast.width(),
                fast.channels()
            )));
        }
        Ok(Self { slow, fast })
    }

    /// Build from fast frames alone, taking every `alpha`-th frame for the slow pathway.
    pub fn from_fast(fast: FrameVolume, alpha: usize) -> Result<Self> {
        if alpha == 0 || fast.frames() % alpha != 0 {
            return Err(Error::Shape(format!(
                "{} fast frames is not a multiple of alpha = {alpha}",
                fast.frames()
            )));
        }
        let idx: Vec<usize> = (0..fast.frames()).step_by(alpha).collect();
        let slow = fast.select(&idx)?;
        Self::new(slow, fast, alpha)
    }
}
