//! Dataset generation, persistence, experiment orchestration and the
//! command-line interface built on `hammeta-core`.
//!
//! On-disk artifacts are self-describing: each carries the schema version and
//! the SHA-256 of the manifest that produced it.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod format;
pub mod parallel;
pub mod report;

pub use error::{Error, Result};
pub use hammeta_core as core;
