//! File formats, the thread-pool runtime, benchmarks, sweeps and the
//! command-line front end around [`bpnet_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod experiment;
pub mod gridfile;
pub mod report;
pub mod runtime;
pub mod volume;

pub use error::{Error, Result};
