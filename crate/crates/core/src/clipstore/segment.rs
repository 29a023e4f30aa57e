use serde::{Deserialize, Serialize};

use super::manifest::ClipRecord;
use crate::error::{Error, Result};

/// Tolerance, in frames, when mapping window bounds to frame indices.
const FRAME_EPS: f64 = 1e-9;

/// Class label. Near-miss is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    SafeDriving,
    NearMiss,
}

impl Label {
    /// Output index in the classifier head.
    pub fn class_index(self) -> usize {
        match self {
            Label::SafeDriving => 0,
            Label::NearMiss => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::SafeDriving),
            1 => Ok(Label::NearMiss),
            _ => Err(Error::Invalid(format!("class index {i} is neither safe_driving (0) nor near_miss (1)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::SafeDriving => "safe_driving",
            Label::NearMiss => "near_miss",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "safe_driving" => Ok(Label::SafeDriving),
            "near_miss" => Ok(Label::NearMiss),
            _ => Err(Error::Invalid(format!("unknown class {s:?} (expected near_miss or safe_driving)"))),
        }
    }
}

/// Time interval in seconds: `[lo, hi)` or, with `closed`, `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
    pub closed: bool,
}

impl Window {
    pub fn half_open(lo: f64, hi: f64) -> Self {
        Self { lo, hi, closed: false }
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        Self { lo, hi, closed: true }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && (t < self.hi || (self.closed && t <= self.hi))
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    /// Indices of the frames at `fps` whose timestamps fall inside the
    /// window, limited to `n_frames`.
    pub fn frame_range(&self, fps: f64, n_frames: usize) -> std::ops::Range<usize> {
        let first = (self.lo * fps - FRAME_EPS).ceil().max(0.0) as usize;
        let end = if self.closed {
            (self.hi * fps + FRAME_EPS).floor() as i64 + 1
        } else {
            (self.hi * fps - FRAME_EPS).ceil() as i64
        };
        let end = (end.max(0) as usize).min(n_frames);
        first.min(end)..end
    }

    /// Whether two windows share no instant.
    pub fn disjoint(&self, other: &Window) -> bool {
        let before = |a: &Window, b: &Window| if a.closed { a.hi < b.lo } else { a.hi <= b.lo };
        before(self, other) || before(other, self)
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}{}", self.lo, self.hi, if self.closed { "]" } else { ")" })
    }
}

/// Where a timestamp falls under a policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Safe,
    NearMiss,
    Excluded,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationPolicy {
    pub safe_window: Window,
    pub nearmiss_window: Window,
}

impl Default for SegmentationPolicy {
    fn default() -> Self {
        Self {
            safe_window: Window::half_open(0.0, 5.0),
            nearmiss_window: Window::closed(5.0, 10.0),
        }
    }
}

impl SegmentationPolicy {
    /// Problems with the policy itself, independent of any clip.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, w, closed) in [
            ("safe window", &self.safe_window, false),
            ("near-miss window", &self.nearmiss_window, true),
        ] {
            if !(w.lo.is_finite() && w.hi.is_finite() && w.lo >= 0.0 && w.lo < w.hi) {
                out.push(format!("{name} {w} must satisfy 0 <= lo < hi"));
            }
            if w.closed != closed {
                out.push(format!(
                    "{name} {w} must be {}",
                    if closed { "closed" } else { "half-open" }
                ));
            }
        }
        if !self.safe_window.disjoint(&self.nearmiss_window) {
            out.push(format!(
                "safe window {} overlaps near-miss window {}",
                self.safe_window, self.nearmiss_window
            ));
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

    pub fn region(&self, t: f64) -> Region {
        if self.safe_window.contains(t) {
            Region::Safe
        } else if self.nearmiss_window.contains(t) {
            Region::NearMiss
        } else {
            Region::Excluded
        }
    }
}

/// A labelled time window of one clip with the source frames inside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSegment {
    pub clip_id: String,
    pub label: Label,
    pub window: Window,
    pub frame_indices: Vec<usize>,
}

/// Cut a clip into its safe-driving and near-miss segments. Frames outside
/// both windows are dropped. A clip without an event yields only the
/// safe-driving segment.
pub fn segment_clip(clip: &ClipRecord, policy: &SegmentationPolicy) -> Result<Vec<LabeledSegment>> {
    policy.validate()?;
    let mut out = Vec::with_capacity(2);
    for (name, w, label) in [
        ("safe window", policy.safe_window, Label::SafeDriving),
        ("near-miss window", policy.nearmiss_window, Label::NearMiss),
    ] {
        if w.hi > clip.duration_s + 1e-9 {
            return Err(Error::Invalid(format!(
                "clip {}: {name} {w} exceeds clip duration {} s",
                clip.clip_id, clip.duration_s
            )));
        }
        if label == Label::NearMiss && clip.event_time_s.is_none() {
            continue;
        }
        out.push(LabeledSegment {
            clip_id: clip.clip_id.clone(),
            label,
            window: w,
            frame_indices: w.frame_range(clip.fps, clip.n_frames).collect(),
        });
    }
    Ok(out)
}
