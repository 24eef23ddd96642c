//! Configuration, file formats and commands of the `keysel` simulator.

pub mod audit;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod io;
pub mod report;

pub use error::{CliError, Result};
