//! Cold-start library profiling analyzer.
//!
//! Reads per-invocation traces of module imports and sampled call paths,
//! attributes initialization time to libraries and packages, measures how
//! much each library is actually used while the handler runs, and flags
//! libraries whose initialization cost is not justified by their use.

pub mod accuracy_sim;
pub mod cct;
pub mod cli;
pub mod config;
pub mod detector;
pub mod error;
pub mod metrics;
pub mod package_mapper;
pub mod report;
pub mod trace_model;

pub use error::{Error, Result};
