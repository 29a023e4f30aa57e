//! Warmup plus cosine-annealing training with SGD, and curve logging.

mod curve;
mod data;
mod fit;
mod optim;
mod schedule;

pub use curve::{smooth_curve, EpochRecord, IterRecord, TrainingCurve};
pub use data::{compute_input_norm, SampleRef, SegmentSet, Transform};
pub use fit::{evaluate, fit, train_epoch, EpochStats, EvalOutput, FitOptions, FitResult};
pub use optim::{OptimConfig, Sgd};
pub use schedule::{lr_at, lr_at_fraction, ScheduleConfig};
