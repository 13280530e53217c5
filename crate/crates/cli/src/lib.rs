//! Command-line entry points: the two server daemons, the user agent, the
//! benchmark and a few key and fixture helpers.

pub mod commands;
pub mod config;
mod error;
pub mod tensor_io;

pub use error::{exit, CliError};
