//! File formats, experiment configuration and command implementations on
//! top of [`hfe_core`].

pub mod ablation;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;
pub mod store;

pub use error::CliError;
