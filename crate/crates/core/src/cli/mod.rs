//! Command-line front end: configuration, CSV I/O, simulation and dispatch.

pub mod args;
pub mod commands;
pub mod config;
pub mod io;
pub mod simulate;

pub use args::{Cli, Command};
pub use commands::{error_record, run_command, ResultsBundle};
pub use config::{ModelSelector, RunConfig};
