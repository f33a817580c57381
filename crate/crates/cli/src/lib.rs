//! Command-line front end for the stability lab: configuration, command
//! execution, and CSV/JSON/SVG emission.

pub mod config;
pub mod report;
pub mod run;

pub use config::{parse_config, ConfigError, RunConfig};
pub use run::{run, Outcome};
