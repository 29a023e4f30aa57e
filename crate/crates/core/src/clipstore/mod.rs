//! Clip manifests, temporal segmentation, grouped splits, frame sampling and
//! training-time augmentation.

mod manifest;
mod sampling;
mod segment;
mod source;
mod split;

pub use manifest::{read_manifest, read_manifest_with_fps, write_manifest, ClipRecord, Origin, DEFAULT_EVENT_TIME_S, DEFAULT_FPS};
pub use sampling::{eval_transform, sample_frames, sample_indices, scale_jitter, JitterConfig, SampledIndices};
pub use segment::{segment_clip, Label, LabeledSegment, Region, SegmentationPolicy, Window};
pub use source::{FrameDir, FrameSource, MemorySource};
pub use split::{make_splits, DatasetSplit, SplitPart};
