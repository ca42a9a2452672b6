//! Command-line experiment runner for the `np2m2` library.

pub mod config;
pub mod error;
pub mod report;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use runner::{run_plan, Plan, RunOutcome, SweepParam};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
