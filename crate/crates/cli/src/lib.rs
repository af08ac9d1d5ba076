//! Experiment orchestration for the redatuming pipelines: JSON configuration,
//! cached stage execution, reports and snapshot images.

pub mod cache;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod render;

pub use error::{CliError, Result};
