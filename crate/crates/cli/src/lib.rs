//! Library side of the `sop` command: run configuration and the
//! subcommands, usable from tests.

pub mod commands;
pub mod config;
pub mod error;
