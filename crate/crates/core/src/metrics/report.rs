use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::clipstore::Label;
use crate::error::{Error, Result};

/// Counts with near-miss as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Self { tp, fn_, fp, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    /// The same predictions seen with safe-driving as the positive class.
    pub fn swap_positive(&self) -> Self {
        Self::new(self.tn, self.fp, self.fn_, self.tp)
    }
}

pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Invalid("confusion matrix of zero samples".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, y) in predictions.iter().zip(labels) {
        match (y, p) {
            (Label::NearMiss, Label::NearMiss) => cm.tp += 1,
            (Label::NearMiss, Label::SafeDriving) => cm.fn_ += 1,
            (Label::SafeDriving, Label::NearMiss) => cm.fp += 1,
            (Label::SafeDriving, Label::SafeDriving) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFlag {
    UndefinedPrecision,
    UndefinedRecall,
    UndefinedF1,
}

/// Scores in percent, unrounded. Undefined scores are 0 with a flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub flags: BTreeSet<MetricFlag>,
}

impl MetricsReport {
    /// Scores rounded half-up to two decimals, for display.
    pub fn rounded(&self) -> [f64; 4] {
        use super::table::round2;
        [round2(self.accuracy), round2(self.recall), round2(self.precision), round2(self.f1)]
    }

    pub fn to_text(&self) -> String {
        let [a, r, p, f] = self.rounded();
        let cm = &self.confusion;
        let mut s = format!(
            "TP {}  FN {}  FP {}  TN {}\naccuracy  {a:6.2}\nrecall    {r:6.2}\nprecision {p:6.2}\nf1        {f:6.2}\n",
            cm.tp, cm.fn_, cm.fp, cm.tn
        );
        if !self.flags.is_empty() {
            let names: Vec<String> = self
                .flags
                .iter()
                .map(|f| serde_json::to_value(f).unwrap().as_str().unwrap().to_string())
                .collect();
            s.push_str(&format!("flags     {}\n", names.join(", ")));
        }
        s
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Invalid("metrics of an empty confusion matrix".into()));
    }
    let mut flags = BTreeSet::new();
    let pct = |num: u64, den: u64, flag: MetricFlag, flags: &mut BTreeSet<MetricFlag>| {
        if den == 0 {
            flags.insert(flag);
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    };
    let accuracy = 100.0 * (cm.tp + cm.tn) as f64 / total as f64;
    let precision = pct(cm.tp, cm.tp + cm.fp, MetricFlag::UndefinedPrecision, &mut flags);
    let recall = pct(cm.tp, cm.tp + cm.fn_, MetricFlag::UndefinedRecall, &mut flags);
    // F1 = 2PR / (P + R) = 2 TP / (2 TP + FP + FN), defined when both P and R are.
    let f1 = if flags.is_empty() && cm.tp > 0 {
        100.0 * 2.0 * cm.tp as f64 / (2 * cm.tp + cm.fp + cm.fn_) as f64
    } else {
        flags.insert(MetricFlag::UndefinedF1);
        0.0
    };
    Ok(MetricsReport {
        confusion: *cm,
        accuracy,
        recall,
        precision,
        f1,
        flags,
    })
}
