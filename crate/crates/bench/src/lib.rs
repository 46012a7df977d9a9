//! Datasets, file formats, the rotation-robustness experiments and the
//! paper-figure demos built on `equirecon-core`.

pub mod checkpoint;
pub mod config;
pub mod demos;
pub mod error;
pub mod experiment;
pub mod problem;
pub mod tensor_io;

pub use config::ExperimentConfig;
pub use error::{BenchError, Result};
