//! Experiment driver for the tensor-train space-time CDR solver.
//!
//! The binary runs the convergence/compression experiments described by
//! a flat key-value config file and writes machine-readable reports; a
//! `selftest` subcommand exercises the library invariants.

pub mod config;
pub mod experiment;
pub mod report;
pub mod selftest;

pub use config::{ExperimentConfig, Method, OutputFormat};
pub use experiment::{run_experiment, RunRow};
