use std::collections::HashSet;

use crate::clipstore::{
    eval_transform, sample_frames, scale_jitter, segment_clip, ClipRecord, FrameSource, JitterConfig, Label,
    LabeledSegment, SegmentationPolicy,
};
use crate::error::{Error, Result};
use crate::frames::FramePair;
use crate::slowfast::{InputNorm, PathwayConfig};

/// Spatial preprocessing applied to the fast frames (the slow frames are
/// taken from the transformed fast frames).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    /// Keep native resolution.
    Native,
    /// Random scale jitter and crop.
    Jitter(JitterConfig),
    /// Short-side resize and centre crop.
    Center(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRef {
    pub clip: ClipRecord,
    pub segment: LabeledSegment,
}

/// Labelled segments of a set of clips, backed by a frame source.
pub struct SegmentSet<'a> {
    pub samples: Vec<SampleRef>,
    pub source: &'a dyn FrameSource,
}

impl<'a> SegmentSet<'a> {
    /// Segments of the clips named in `ids`, in the order of `clips`.
    pub fn from_clips(
        clips: &[ClipRecord],
        ids: &[String],
        policy: &SegmentationPolicy,
        source: &'a dyn FrameSource,
    ) -> Result<Self> {
        let wanted: HashSet<&str> = ids.iter().map(|s| s.as_str()).collect();
        let known: HashSet<&str> = clips.iter().map(|c| c.clip_id.as_str()).collect();
        if let Some(missing) = ids.iter().find(|id| !known.contains(id.as_str())) {
            return Err(Error::NotFound(format!("clip {missing} is in the split but not in the manifest")));
        }
        let mut samples = Vec::new();
        for clip in clips.iter().filter(|c| wanted.contains(c.clip_id.as_str())) {
            for segment in segment_clip(clip, policy)? {
                samples.push(SampleRef {
                    clip: clip.clone(),
                    segment,
                });
            }
        }
        Ok(Self { samples, source })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.segment.label).collect()
    }

    /// Frames of sample `i` with temporal `offset` (see
    /// [`crate::clipstore::sample_indices`]) and the given transform.
    pub fn load(
        &self,
        i: usize,
        cfg: &PathwayConfig,
        offset: f64,
        transform: &Transform,
        jitter_seed: u64,
    ) -> Result<FramePair> {
        let s = &self.samples[i];
        let pair = sample_frames(&s.segment, &s.clip, cfg, self.source, offset)?;
        let fast = match transform {
            Transform::Native => return Ok(pair),
            Transform::Jitter(j) => scale_jitter(&pair.fast, j, jitter_seed)?,
            Transform::Center(c) => eval_transform(&pair.fast, *c)?,
        };
        FramePair::from_fast(fast, cfg.alpha)
    }
}

/// Per-channel mean and standard deviation of the centred evaluation frames
/// of a (training) set.
pub fn compute_input_norm(set: &SegmentSet, cfg: &PathwayConfig, transform: &Transform) -> Result<InputNorm> {
    if set.is_empty() {
        return Err(Error::Invalid("cannot compute input statistics of an empty set".into()));
    }
    let c = cfg.in_channels;
    let mut sum = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    let mut count = 0usize;
    for i in 0..set.len() {
        let pair = set.load(i, cfg, 0.5, transform, 0)?;
        if pair.fast.channels() != c {
            return Err(Error::Shape(format!(
                "sample {i} has {} channels, model expects {c}",
                pair.fast.channels()
            )));
        }
        for px in pair.fast.data().chunks(c) {
            for (k, &v) in px.iter().enumerate() {
                sum[k] += v as f64;
                sq[k] += v as f64 * v as f64;
            }
        }
        count += pair.fast.data().len() / c;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / count as f64 - m * m).max(0.0).sqrt().max(1e-3))
        .collect();
    Ok(InputNorm { mean, std })
}
