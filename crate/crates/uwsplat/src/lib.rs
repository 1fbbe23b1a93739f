//! Underwater Gaussian splatting: dataset handling, file formats, training
//! orchestration, and verification suites around the `uwsplat-core`
//! numerics.

pub mod colmap;
pub mod dataset;
mod error;
pub mod io;
pub mod synth;
pub mod trainer;
pub mod verify;

pub use error::{AppError, AppResult};
