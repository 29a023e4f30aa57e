//! The dual-pathway classifier.

mod blocks;
mod checkpoint;
mod config;
mod fusion;
pub mod gradcheck;
mod model;
mod summary;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, RngState, CHECKPOINT_VERSION};
pub use config::{Depth, Pathway, PathwayConfig, STAGE_NAMES};
pub use fusion::LateralFusion;
pub use model::{build_slowfast, softmax, InputNorm, LayerId, LayerRow, Logits, SlowFast};
pub use summary::ModelSummary;
