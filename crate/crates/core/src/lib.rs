//! Identifier-aware sparse attention for long source files.

#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod archive;
pub mod attention;
pub mod autograd;
pub mod bench;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod kernels;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod params;
pub mod synthetic;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
