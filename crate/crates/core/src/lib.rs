//! Core numerics for joint 3D Gaussian scene reconstruction and underwater
//! medium estimation.
//!
//! Everything in this crate is pure computation over in-memory buffers:
//! dense image containers and quality metrics, a small reverse-mode autodiff
//! engine, a differentiable CPU splat rasterizer, the attenuation/backscatter
//! medium model, the training losses, and the optimizer/training-step
//! machinery. File formats, dataset handling, and the CLI live in the
//! companion `uwsplat` crate.
//!
//! The crate is `no_std` (with `alloc`); float transcendentals come from
//! `libm`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod camera;
pub mod cloud;
mod error;
pub mod image;
pub mod loss;
mod math;
pub mod medium;
pub mod optim;
pub mod render;
pub mod train;

pub use error::{Error, Result};
