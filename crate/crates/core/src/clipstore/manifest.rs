use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Origin::Real => "real",
            Origin::Synthetic => "synthetic",
        })
    }
}

/// A source clip and its timing metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub source_path: PathBuf,
    pub fps: f64,
    pub duration_s: f64,
    pub n_frames: usize,
    pub origin: Origin,
    /// Nominal near-miss moment. `None` marks a clip without any event.
    pub event_time_s: Option<f64>,
}

pub const DEFAULT_EVENT_TIME_S: f64 = 10.0;
pub const DEFAULT_FPS: f64 = 30.0;

impl ClipRecord {
    /// Build a record with `n_frames = round(fps * duration_s)`.
    pub fn new(
        clip_id: impl Into<String>,
        source_path: impl Into<PathBuf>,
        fps: f64,
        duration_s: f64,
        origin: Origin,
        event_time_s: Option<f64>,
    ) -> Result<Self> {
        let rec = Self {
            clip_id: clip_id.into(),
            source_path: source_path.into(),
            fps,
            duration_s,
            n_frames: (fps * duration_s).round().max(0.0) as usize,
            origin,
            event_time_s,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.clip_id;
        if id.is_empty() || id.chars().any(|c| c == '\t' || c == '\n') {
            return Err(Error::Invalid(format!("clip id {id:?} must be non-empty without tabs or newlines")));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Invalid(format!("clip {id}: fps must be positive (got {})", self.fps)));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Invalid(format!("clip {id}: duration must be positive (got {})", self.duration_s)));
        }
        let expected = self.fps * self.duration_s;
        if (self.n_frames as f64 - expected).abs() > 1.0 + 1e-9 {
            return Err(Error::Invalid(format!(
                "clip {id}: {} frames but fps x duration = {expected:.2}",
                self.n_frames
            )));
        }
        if let Some(t) = self.event_time_s {
            if !(t > 0.0 && t <= self.duration_s) {
                return Err(Error::Invalid(format!(
                    "clip {id}: event time {t} s outside (0, {}] s",
                    self.duration_s
                )));
            }
        }
        Ok(())
    }

    /// Timestamp of frame `i`.
    pub fn frame_time(&self, i: usize) -> f64 {
        i as f64 / self.fps
    }
}

const HEADER: &str = "# clip_id\tsource_path\tfps\tduration_s\torigin\tevent_time_s";

/// Write one tab-separated record per line, in the fixed field order
/// `clip_id, source_path, fps, duration_s, origin, event_time_s`.
pub fn write_manifest(path: &Path, clips: &[ClipRecord]) -> Result<()> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for c in clips {
        let src = c.source_path.to_str().ok_or_else(|| {
            Error::Invalid(format!("clip {}: source path is not valid UTF-8", c.clip_id))
        })?;
        let event = c.event_time_s.map_or("none".to_string(), |t| t.to_string());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            c.clip_id, src, c.fps, c.duration_s, c.origin, event
        ));
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a manifest. Relative source paths resolve against the manifest's
/// directory; blank lines and `#` comments are skipped. The optional sixth
/// field defaults to the 10 s event time, `none` marks an event-free clip.
/// An fps field of `-` means [`DEFAULT_FPS`].
pub fn read_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    read_manifest_with_fps(path, DEFAULT_FPS)
}

/// [`read_manifest`] with a different fps for rows whose fps field is `-`.
pub fn read_manifest_with_fps(path: &Path, default_fps: f64) -> Result<Vec<ClipRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut clips: Vec<ClipRecord> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::format(path, format!("line {}: {msg}", ln + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if !(5..=6).contains(&fields.len()) {
            return Err(bad(format!("expected 5 or 6 tab-separated fields, found {}", fields.len())));
        }
        let num = |i: usize, what: &str| -> Result<f64> {
            fields[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("{what} {:?} is not a number", fields[i])))
        };
        let origin = match fields[4].trim() {
            "real" => Origin::Real,
            "synthetic" => Origin::Synthetic,
            other => return Err(bad(format!("origin {other:?} must be real or synthetic"))),
        };
        let event = match fields.get(5).map(|s| s.trim()) {
            None | Some("") => Some(DEFAULT_EVENT_TIME_S),
            Some("none") => None,
            Some(_) => Some(num(5, "event_time_s")?),
        };
        let src = PathBuf::from(fields[1]);
        let src = if src.is_relative() { base.join(src) } else { src };
        let fps = if fields[2].trim() == "-" { default_fps } else { num(2, "fps")? };
        let rec = ClipRecord::new(fields[0].trim(), src, fps, num(3, "duration_s")?, origin, event)
            .map_err(|e| bad(e.to_string()))?;
        if clips.iter().any(|c| c.clip_id == rec.clip_id) {
            return Err(bad(format!("duplicate clip id {}", rec.clip_id)));
        }
        clips.push(rec);
    }
    Ok(clips)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_follows_fps_and_duration() {
        let c = ClipRecord::new("a", "a", 30.0, 15.0, Origin::Real, Some(10.0)).unwrap();
        assert_eq!(c.n_frames, 450);
        let mut bad = c.clone();
        bad.n_frames = 452;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn missing_fps_uses_the_default() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "a\tclips/a\t-\t15\treal\n").unwrap();
        assert_eq!(read_manifest(&p).unwrap()[0].n_frames, 450);
        assert_eq!(read_manifest_with_fps(&p, 10.0).unwrap()[0].n_frames, 150);
    }

    #[test]
    fn event_time_must_lie_inside_clip() {
        assert!(ClipRecord::new("a", "a", 30.0, 15.0, Origin::Real, Some(16.0)).is_err());
        assert!(ClipRecord::new("a", "a", 30.0, 15.0, Origin::Real, Some(0.0)).is_err());
    }
}
