//! Experiment protocols behind the `valley` binary.
//!
//! Every protocol takes an [`report::ExperimentConfig`], computes in memory
//! and only then writes its artifacts, so a failed run leaves nothing behind.

pub mod probe;
pub mod protocols;
pub mod report;

use anyhow::Result;

pub use report::{ExperimentConfig, Outcome, Report};

/// Runs the protocol and writes its artifacts plus `report.json`.
pub fn execute(config: ExperimentConfig) -> Result<Report> {
    let outcome = protocols::run(&config)?;
    report::finish(config, outcome)
}
