//! Dataset handling, training loop, checkpoints, and run orchestration for
//! the kernel U-Net forecaster in `kunet-core`.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod runner;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, Result};
