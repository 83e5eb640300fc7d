//! Benchmark harness for the `pnlk` toolkit: experiment runners, CSV
//! records, SVG charts and the `pnlk` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod plot;
pub mod record;

pub use error::{BenchError, Result};
