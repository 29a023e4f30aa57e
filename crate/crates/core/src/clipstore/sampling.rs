use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::ClipRecord;
use super::segment::LabeledSegment;
use super::source::FrameSource;
use crate::error::{Error, Result};
use crate::frames::{FramePair, FrameVolume};
use crate::slowfast::PathwayConfig;

/// Source-frame indices chosen for the two pathways.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledIndices {
    pub fast: Vec<usize>,
    pub slow: Vec<usize>,
}

/// Pick `alpha * slow_frames` frames spread uniformly over the segment:
/// fast frame `i` is the `floor((i + offset) * n / T)`-th frame of the
/// segment's `n` frames. `offset = 0.5` gives the centred evaluation grid;
/// training draws it from `[0, 1)`. Slow frames are every `alpha`-th fast frame.
pub fn sample_indices(segment: &LabeledSegment, cfg: &PathwayConfig, offset: f64) -> Result<SampledIndices> {
    if !(0.0..1.0).contains(&offset) {
        return Err(Error::Invalid(format!("temporal offset {offset} outside [0, 1)")));
    }
    let t = cfg.fast_frames();
    let n = segment.frame_indices.len();
    if t == 0 || cfg.alpha == 0 {
        return Err(Error::Invalid("pathway config requests zero frames".into()));
    }
    if n < t {
        return Err(Error::Invalid(format!(
            "segment {} {} has {n} frames, at least {t} are required",
            segment.clip_id, segment.window
        )));
    }
    let fast: Vec<usize> = (0..t)
        .map(|i| {
            let k = (((i as f64 + offset) * n as f64) / t as f64).floor() as usize;
            segment.frame_indices[k.min(n - 1)]
        })
        .collect();
    let slow = fast.iter().step_by(cfg.alpha).copied().collect();
    Ok(SampledIndices { fast, slow })
}

/// Decode the sampled frames of a segment for both pathways.
pub fn sample_frames(
    segment: &LabeledSegment,
    clip: &ClipRecord,
    cfg: &PathwayConfig,
    source: &dyn FrameSource,
    offset: f64,
) -> Result<FramePair> {
    if segment.clip_id != clip.clip_id {
        return Err(Error::Invalid(format!(
            "segment of clip {} sampled with record of clip {}",
            segment.clip_id, clip.clip_id
        )));
    }
    let idx = sample_indices(segment, cfg, offset)?;
    let fast = source.load(clip, &idx.fast)?;
    FramePair::from_fast(fast, cfg.alpha)
}

/// Scale jitter: resize so the short side is drawn uniformly from
/// `short_side`, then take a random `crop × crop` window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterConfig {
    pub short_side: [usize; 2],
    pub crop: usize,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            short_side: [256, 320],
            crop: 224,
        }
    }
}

impl JitterConfig {
    pub fn problems(&self) -> Vec<String> {
        let [lo, hi] = self.short_side;
        let mut out = Vec::new();
        if lo == 0 || lo > hi {
            out.push(format!("jitter short-side range [{lo}, {hi}] must satisfy 0 < lo <= hi"));
        }
        if self.crop == 0 || self.crop > lo {
            out.push(format!("jitter crop {} must be positive and no larger than lo = {lo}", self.crop));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}

fn resize_short_side(frames: &FrameVolume, short: usize) -> Result<FrameVolume> {
    let (h, w) = (frames.height(), frames.width());
    let s0 = h.min(w) as f64;
    let (nh, nw) = if h <= w {
        (short, ((w as f64 * short as f64 / s0).round() as usize).max(short))
    } else {
        (((h as f64 * short as f64 / s0).round() as usize).max(short), short)
    };
    frames.map_frames(|f| f.resize(nh, nw))
}

fn crop_all(frames: &FrameVolume, top: usize, left: usize, size: usize) -> Result<FrameVolume> {
    let imgs = (0..frames.frames())
        .map(|t| frames.frame(t).crop(top, left, size, size))
        .collect::<Result<Vec<_>>>()?;
    FrameVolume::from_frames(imgs)
}

/// Training augmentation; the same scale and crop apply to every frame.
pub fn scale_jitter(frames: &FrameVolume, cfg: &JitterConfig, seed: u64) -> Result<FrameVolume> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let short = rng.random_range(cfg.short_side[0]..=cfg.short_side[1]);
    let r = resize_short_side(frames, short)?;
    let top = rng.random_range(0..=r.height() - cfg.crop);
    let left = rng.random_range(0..=r.width() - cfg.crop);
    crop_all(&r, top, left, cfg.crop)
}

/// Evaluation transform: short side resized to `crop`, then a centre crop.
pub fn eval_transform(frames: &FrameVolume, crop: usize) -> Result<FrameVolume> {
    if crop == 0 {
        return Err(Error::Invalid("crop size must be positive".into()));
    }
    let r = resize_short_side(frames, crop)?;
    crop_all(&r, (r.height() - crop) / 2, (r.width() - crop) / 2, crop)
}
