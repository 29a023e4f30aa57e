use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slowfast::SlowFast;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 8,
            max_epochs: 196,
        }
    }
}

impl OptimConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(format!("train.momentum {} must lie in [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            out.push(format!("train.weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.batch_size == 0 {
            out.push("train.batch_size must be positive".into());
        }
        if self.max_epochs == 0 {
            out.push("train.max_epochs must be positive".into());
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

/// SGD with momentum and L2 weight decay:
/// `v = momentum * v + grad + weight_decay * p`, then `p -= lr * v`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(cfg: &OptimConfig) -> Self {
        Self {
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, model: &mut SlowFast, lr: f64) {
        let (m, wd) = (self.momentum, self.weight_decay);
        let fresh = self.velocity.is_empty();
        let mut k = 0;
        let vel = &mut self.velocity;
        model.visit_params(&mut |p| {
            if fresh {
                vel.push(vec![0.0; p.len()]);
            }
            let v = &mut vel[k];
            for ((vi, pi), gi) in v.iter_mut().zip(p.value.iter_mut()).zip(&p.grad) {
                *vi = m * *vi + gi + wd * *pi;
                *pi -= lr * *vi;
            }
            k += 1;
        });
    }
}
