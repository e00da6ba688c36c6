//! File formats, dataset IO and the command-line pipeline around
//! [`clfa_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fixture;
pub mod labels;
pub mod lexicon;
pub mod manifest;
pub mod report;
mod wire;

pub use error::{CliError, FormatError, Result};
