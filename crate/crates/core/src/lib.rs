//! Patch-parallel reconstruction of subsampled multi-coil k-space.
//!
//! k-space is split into windowed bandpass patches; each patch is solved by
//! an unrolled network that alternates data-consistency gradient steps with
//! learned convolutional denoising, and the patch outputs are averaged back
//! onto the full grid. This crate holds the numerical core and only needs
//! `alloc`; file formats, threading and the command line live in `bpnet`.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod bandpass;
mod conv;
pub mod denoiser;
mod error;
pub mod exec;
pub mod fft;
pub mod grid;
pub mod math;
pub mod metrics;
pub mod model;
pub mod network;
pub mod sampling;
pub mod simulate;
pub mod training;

pub use error::{Error, Result};
pub use grid::{inner_product, ComplexGrid, MultiCoilKSpace, RealGrid};
pub use num_complex::Complex64;
