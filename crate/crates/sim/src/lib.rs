//! Driver for `ocdfl-core`: config files, dataset loading, metrics and
//! manifest output, and the `ocdfl` command line.

pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod output;

pub use error::SimError;
