//! File formats, configuration files, CSV reports and the `dlac`
//! command-line driver for [`dlac_core`].

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod schema;

pub use error::{Error, Result};
