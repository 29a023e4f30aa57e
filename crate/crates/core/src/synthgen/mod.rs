//! Synthetic dashcam-like clips with controllable near-miss events.
//!
//! A clip is a slowly drifting procedural road texture. Near-miss clips add
//! a flat-shaded vehicle sprite that appears at an entry edge at `onset_s`
//! and moves quickly toward the frame centre line, where it stops.

mod corpus;
mod render;
mod spec;

pub use corpus::{clip_seed, generate_corpus, write_corpus, Corpus, CorpusEntry, CorpusOptions, SynthSource};
pub use render::{generate_clip, motion_energy_score, BBox, FrameBox, GroundTruth, Renderer};
pub use spec::{MIN_SPEED_RATIO, Background, EntrySide, Intruder, Shape, SynthClipSpec};
