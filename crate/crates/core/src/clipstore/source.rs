use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::manifest::ClipRecord;
use crate::error::{Error, Result};
use crate::frames::{FrameVolume, Image};

/// Decoder interface: frames of a clip by index, at native resolution.
pub trait FrameSource {
    fn load(&self, clip: &ClipRecord, indices: &[usize]) -> Result<FrameVolume>;
}

/// Directories of numbered PNG frames, `000000.png`, `000001.png`, ...
#[derive(Clone, Copy, Debug, Default)]
pub struct FrameDir;

impl FrameDir {
    pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
        dir.join(format!("{index:06}.png"))
    }

    /// Number of frame files in a clip directory.
    pub fn count(dir: &Path) -> Result<usize> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut n = 0;
        for e in entries {
            let e = e.map_err(|e| Error::io(dir, e))?;
            let p = e.path();
            let numbered = p.extension().is_some_and(|x| x == "png")
                && p.file_stem().and_then(|s| s.to_str()).is_some_and(|s| s.chars().all(|c| c.is_ascii_digit()));
            if numbered {
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn read_frame(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|e| Error::format(path, format!("cannot decode frame: {e}")))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Image {
            height: h as usize,
            width: w as usize,
            channels: 3,
            data: img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        })
    }

    pub fn write_frame(path: &Path, frame: &Image) -> Result<()> {
        let px: Vec<u8> = frame
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let color = match frame.channels {
            1 => image::ColorType::L8,
            3 => image::ColorType::Rgb8,
            c => return Err(Error::Invalid(format!("cannot write a {c}-channel frame"))),
        };
        image::save_buffer(path, &px, frame.width as u32, frame.height as u32, color)?;
        Ok(())
    }
}

impl FrameSource for FrameDir {
    fn load(&self, clip: &ClipRecord, indices: &[usize]) -> Result<FrameVolume> {
        let frames = indices
            .iter()
            .map(|&i| {
                let p = Self::frame_path(&clip.source_path, i);
                if !p.is_file() {
                    return Err(Error::NotFound(format!("frame {i} of clip {} ({})", clip.clip_id, p.display())));
                }
                Self::read_frame(&p)
            })
            .collect::<Result<Vec<_>>>()?;
        FrameVolume::from_frames(frames)
    }
}

/// Decoded clips held in memory, keyed by clip id.
#[derive(Clone, Debug, Default)]
pub struct MemorySource {
    clips: HashMap<String, FrameVolume>,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, clip_id: impl Into<String>, frames: FrameVolume) {
        self.clips.insert(clip_id.into(), frames);
    }

    pub fn get(&self, clip_id: &str) -> Option<&FrameVolume> {
        self.clips.get(clip_id)
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

impl FrameSource for MemorySource {
    fn load(&self, clip: &ClipRecord, indices: &[usize]) -> Result<FrameVolume> {
        self.clips
            .get(&clip.clip_id)
            .ok_or_else(|| Error::NotFound(format!("clip {} in memory source", clip.clip_id)))?
            .select(indices)
    }
}
