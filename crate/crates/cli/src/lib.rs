//! Command-line front end: configuration, dimension reports and parameter sweeps.

pub mod app;
pub mod config;
pub mod report;
pub mod sweep;

pub use config::{OutputFormat, RunConfig};
pub use report::{build_report, DimensionReport};
