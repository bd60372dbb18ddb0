//! File formats, configuration and experiment pipelines behind the
//! `llc-lab` binary.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod formats;

pub use config::LabConfig;
pub use error::{LabError, Result};
