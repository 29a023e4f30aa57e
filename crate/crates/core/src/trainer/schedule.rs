use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup from `warmup_start` to `lr_max`, then one cosine cycle
/// from `lr_max` down to `lr_min` at `t_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub lr_min: f64,
    pub lr_max: f64,
    pub warmup_start: f64,
    pub warmup_epochs: usize,
    pub t_max: usize,
    /// Evaluate the schedule at fractional epochs, once per iteration.
    pub per_iteration: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            lr_min: 0.0,
            lr_max: 0.1,
            warmup_start: 0.01,
            warmup_epochs: 34,
            t_max: 196,
            per_iteration: false,
        }
    }
}

impl ScheduleConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lr_min >= 0.0 && self.lr_min < self.lr_max && self.lr_max.is_finite()) {
            out.push(format!(
                "train.lr_min {} and train.lr_max {} must satisfy 0 <= lr_min < lr_max",
                self.lr_min, self.lr_max
            ));
        }
        if !(self.warmup_start > 0.0 && self.warmup_start <= self.lr_max) {
            out.push(format!(
                "train.warmup_start {} must satisfy 0 < warmup_start <= lr_max",
                self.warmup_start
            ));
        }
        if self.warmup_epochs >= self.t_max {
            out.push(format!(
                "train.warmup_epochs {} must be below train.t_max {}",
                self.warmup_epochs, self.t_max
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
}

/// Learning rate at integer epoch `epoch`, `0 <= epoch <= t_max`.
pub fn lr_at(epoch: usize, cfg: &ScheduleConfig) -> Result<f64> {
    lr_at_fraction(epoch as f64, cfg)
}

/// Learning rate at a fractional epoch.
pub fn lr_at_fraction(epoch: f64, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.validate()?;
    if !(epoch >= 0.0 && epoch <= cfg.t_max as f64) {
        return Err(Error::Invalid(format!("epoch {epoch} outside [0, {}]", cfg.t_max)));
    }
    let w = cfg.warmup_epochs as f64;
    if epoch < w {
        return Ok(cfg.warmup_start + (cfg.lr_max - cfg.warmup_start) * epoch / w);
    }
    let t_cur = epoch - w;
    let t_span = cfg.t_max as f64 - w;
    Ok(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (PI * t_cur / t_span).cos()))
}
