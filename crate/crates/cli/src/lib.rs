//! The `archnet` command-line tool: ArchNet training, dataset encryption,
//! EC evaluation, ciphertext rendering and the three-party simulation.

pub mod args;
pub mod commands;
pub mod error;
pub mod source;

pub use args::{Cli, Command};
pub use commands::run;
pub use error::{CliError, Result};
