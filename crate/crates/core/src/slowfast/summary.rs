use serde::{Deserialize, Serialize};

use super::model::{LayerRow, SlowFast};
use crate::error::Result;

/// Analytic compute report: one row per layer plus pathway totals.
///
/// Lateral connections run on fast features at fast channel width and are
/// counted towards the fast pathway; the classifier head counts towards
/// neither pathway but is included in the total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub input: [usize; 2],
    pub params: usize,
    pub layers: Vec<LayerRow>,
    pub slow_macs: u64,
    pub fast_macs: u64,
    pub lateral_macs: u64,
    pub head_macs: u64,
    pub total_macs: u64,
    /// `(fast + lateral) / total`.
    pub fast_share: f64,
}

impl ModelSummary {
    pub fn new(model: &mut SlowFast, height: usize, width: usize) -> Result<Self> {
        let layers = model.layer_table(height, width)?;
        let sum = |pred: &dyn Fn(&LayerRow) -> bool| layers.iter().filter(|r| pred(r)).map(|r| r.macs).sum::<u64>();
        let slow_macs = sum(&|r| r.pathway == "slow");
        let fast_macs = sum(&|r| r.pathway == "fast");
        let lateral_macs = sum(&|r| r.name.starts_with("lateral"));
        let head_macs = sum(&|r| r.name.starts_with("head"));
        let total_macs = slow_macs + fast_macs + lateral_macs + head_macs;
        Ok(Self {
            input: [height, width],
            params: model.num_params(),
            fast_share: (fast_macs + lateral_macs) as f64 / total_macs as f64,
            layers,
            slow_macs,
            fast_macs,
            lateral_macs,
            head_macs,
            total_macs,
        })
    }
}
