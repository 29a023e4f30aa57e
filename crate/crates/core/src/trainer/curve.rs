use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub top1_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_top1_error: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Per-iteration training statistics and per-epoch validation results.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingCurve {
    pub iterations: Vec<IterRecord>,
    pub epochs: Vec<EpochRecord>,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

impl TrainingCurve {
    /// Iterations to `curve_path`, validation epochs to `val_path`, one JSON
    /// object per line.
    pub fn save(&self, curve_path: &Path, val_path: &Path) -> Result<()> {
        write_jsonl(curve_path, &self.iterations)?;
        write_jsonl(val_path, &self.epochs)
    }

    pub fn load(curve_path: &Path, val_path: &Path) -> Result<Self> {
        Ok(Self {
            iterations: read_jsonl(curve_path)?,
            epochs: read_jsonl(val_path)?,
        })
    }
}

/// Centred moving average; near the ends the window is truncated to the
/// available samples. `window` must be odd and positive.
pub fn smooth_curve(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Invalid(format!("smoothing window {window} must be odd and positive")));
    }
    let half = window / 2;
    let n = series.len();
    Ok((0..n)
        .map(|i| {
            let w = &series[i.saturating_sub(half)..(i + half + 1).min(n)];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect())
}
