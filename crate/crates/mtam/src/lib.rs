//! File formats, evaluation driver and command-line front end for the
//! `mtam-core` recommender.

pub mod artifact;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod report;

pub use error::{CliError, Result};
