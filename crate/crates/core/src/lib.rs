//! Core of a hierarchical kernel U-Net for time-series forecasting.
//!
//! Everything in this crate is pure computation over heap-allocated `f64`
//! buffers: a minimal reverse-mode autodiff tensor graph, the multiples
//! schedule that slices a look-back window into segments, the four kernel
//! families (linear, MLP, transformer, LSTM), the encoder/decoder assembly
//! with skip connections, and reversible window normalization. IO, datasets,
//! training loops, and the CLI live in the companion `kunet` crate.
//!
//! The crate is `no_std` (with `alloc`); all transcendental math goes
//! through `libm` so results are identical across hosts.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod check;
pub mod error;
pub mod kernels;
pub mod normalize;
pub mod params;
pub mod partition;
pub mod rng;
pub mod tensor;
pub mod unet;

pub use error::{Error, Result};
pub use params::{Binding, Param, ParamId, ParamStore};
pub use partition::PartitionPlan;
pub use rng::Rng;
pub use tensor::{Graph, TensorId};
pub use unet::{KUNetModel, Variant};
