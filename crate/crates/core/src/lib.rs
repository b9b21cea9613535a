//! Pattern extraction convolution trajectory predictor.
//!
//! The crate is `no_std` (with `alloc`) and holds every numeric piece of the
//! model: a small reverse-mode differentiation tape, egocentric geometry,
//! scene windowing, the location predictor network, its training loop,
//! autoregressive rollout, and ADE/FDE evaluation. File formats and the
//! command line live in the `social-pec` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod predictor;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
