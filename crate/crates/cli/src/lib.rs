//! Batch runner for the `cvsf` command: configuration, orchestration of the
//! estimation pipeline, and table output.

pub mod config;
pub mod failure;
pub mod output;
pub mod run;

pub use config::{BootstrapSection, DiscretizeSpec, Overrides, RegionSpec, RunConfig};
pub use failure::Failure;
pub use run::{
    discretization_study, run_diagnose, run_estimate, run_simulate, run_study, EstimateOutcome,
    Metadata, Study,
};
