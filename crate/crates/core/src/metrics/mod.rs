//! Confusion matrices, the four evaluation scores and baseline comparison tables.

mod report;
mod table;

pub use report::{compute_metrics, confusion, ConfusionMatrix, MetricFlag, MetricsReport};
pub use table::{improvement_table, published_baselines, round2, Baseline, ComparisonRow, ComparisonTable, Metric};
