//! Spatio-temporal recurrent network for skeletal motion manifolds.
//!
//! The crate bundles a small differentiable kernel (tensors, a reverse-mode
//! tape, layer primitives, AdaDelta), a motion-data pipeline for 73-channel
//! skeletal frames, the hierarchical spatial encoder/decoder, the two-way
//! temporal network, a residual filter, the hybrid training recipe and the
//! downstream applications: long-horizon open-loop prediction, denoising and
//! controlled synthesis.

pub mod apps;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod losses;
pub mod model;
pub mod motion;
pub mod optim;
pub mod train;
pub mod spatial;
pub mod temporal;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use layers::Mode;
pub use tensor::Tensor;
