pub mod error;
pub mod explain;
pub mod clipstore;
pub mod frames;
pub mod metrics;
pub mod nn;
pub mod slowfast;
pub mod synthgen;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
