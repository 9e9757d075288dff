//! Library side of the `regclust` command-line tool: configuration, curve
//! files, derivative smoothing, trace storage and the commands themselves.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod smoothing;
pub mod trace_io;

pub use error::CliError;
