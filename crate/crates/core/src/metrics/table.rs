use serde::{Deserialize, Serialize};

use super::report::MetricsReport;
use crate::error::{Error, Result};

/// Table columns, in display order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Precision,
    Recall,
    F1,
    Accuracy,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Precision, Metric::Recall, Metric::F1, Metric::Accuracy];

    pub fn header(self) -> &'static str {
        match self {
            Metric::Precision => "Precision (%)",
            Metric::Recall => "Recall (%)",
            Metric::F1 => "F1 (%)",
            Metric::Accuracy => "Accuracy (%)",
        }
    }

    fn of(self, r: &MetricsReport) -> f64 {
        match self {
            Metric::Precision => r.precision,
            Metric::Recall => r.recall,
            Metric::F1 => r.f1,
            Metric::Accuracy => r.accuracy,
        }
    }
}

/// Round half away from zero to two decimals.
pub fn round2(x: f64) -> f64 {
    x.signum() * ((x.abs() * 100.0 + 0.5 + 1e-9).floor() / 100.0)
}

/// A published result row. Missing cells are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub name: String,
    /// Input modality tag, `V` (video) or `VSO` (video, sensor, objects).
    pub modality: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
}

impl Baseline {
    /// Name with modality, e.g. `NTT (V)`.
    pub fn key(&self) -> String {
        format!("{} ({})", self.name, self.modality)
    }

    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
            Metric::Accuracy => self.accuracy,
        }
    }
}

#[derive(Deserialize)]
struct Fixture {
    baselines: Vec<Baseline>,
}

/// The bundled baseline fixture.
pub fn published_baselines() -> Vec<Baseline> {
    let f: Fixture = serde_json::from_str(include_str!("../../fixtures/baselines.json")).expect("bundled fixture parses");
    f.baselines
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub modality: String,
    pub baseline: bool,
    /// Cells in [`Metric::ALL`] order, rounded to two decimals.
    pub values: [Option<f64>; 4],
    /// `ours - reference` per cell when both exist.
    pub deltas: [Option<f64>; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub reference: String,
    pub rows: Vec<ComparisonRow>,
}

/// Compare `ours` with each baseline; deltas are taken against the
/// baseline whose key (`name (modality)`) is `reference`.
pub fn improvement_table(
    ours: &MetricsReport,
    ours_name: &str,
    baselines: &[Baseline],
    reference: &str,
) -> Result<ComparisonTable> {
    let refrow = baselines
        .iter()
        .find(|b| b.key() == reference)
        .ok_or_else(|| {
            let known: Vec<String> = baselines.iter().map(|b| b.key()).collect();
            Error::NotFound(format!("reference baseline {reference:?} (known: {})", known.join(", ")))
        })?;
    let mut rows: Vec<ComparisonRow> = baselines
        .iter()
        .map(|b| ComparisonRow {
            method: b.name.clone(),
            modality: b.modality.clone(),
            baseline: true,
            values: Metric::ALL.map(|m| b.get(m).map(round2)),
            deltas: [None; 4],
        })
        .collect();
    let values = Metric::ALL.map(|m| Some(round2(m.of(ours))));
    let deltas = Metric::ALL.map(|m| {
        let ours = round2(m.of(ours));
        refrow.get(m).map(|r| round2(ours - r))
    });
    rows.push(ComparisonRow {
        method: ours_name.to_string(),
        modality: "V".into(),
        baseline: false,
        values,
        deltas,
    });
    Ok(ComparisonTable {
        reference: reference.to_string(),
        rows,
    })
}

fn delta_cell(d: f64) -> String {
    if d > 0.0 {
        format!("({d:.2}\u{2191})")
    } else if d < 0.0 {
        format!("({:.2}\u{2193})", -d)
    } else {
        "(0.00)".into()
    }
}

impl ComparisonTable {
    /// Aligned plain-text rendering with footnote markers.
    pub fn to_text(&self) -> String {
        let mut grid: Vec<Vec<String>> = vec![std::iter::once("Method".to_string())
            .chain(Metric::ALL.iter().map(|m| m.header().to_string()))
            .collect()];
        for r in &self.rows {
            let modality_mark = if r.modality == "V" { "*2" } else { "*3" };
            let name = if r.baseline {
                format!("{} *1 ({} {modality_mark})", r.method, r.modality)
            } else {
                format!("{} ({} {modality_mark})", r.method, r.modality)
            };
            let mut line = vec![name];
            for (v, d) in r.values.iter().zip(&r.deltas) {
                line.push(match (v, d) {
                    (None, _) => "-".into(),
                    (Some(v), None) => format!("{v:.2}"),
                    (Some(v), Some(d)) => format!("{v:.2} {} *4", delta_cell(*d)),
                });
            }
            grid.push(line);
        }
        let cols = grid[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| grid.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in grid.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| {
                    let pad = w - cell.chars().count();
                    if c == 0 {
                        format!("{cell}{}", " ".repeat(pad))
                    } else {
                        format!("{}{cell}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
                out.push('\n');
            }
        }
        out.push_str("*1 published baseline result. *2 V: video. *3 VSO: video, sensor, and objects.\n");
        out.push_str(&format!("*4 compared to {}.\n", self.reference));
        out
    }
}
