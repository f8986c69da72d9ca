//! Experiment harness for the continuous online learning lab: config files,
//! multi-seed runs with CSV output, equilibrium solving and the invariant
//! verification suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod solve;
pub mod verify;

pub use config::{ExperimentConfig, Instance};
pub use error::{LabError, LabResult};
pub use experiment::{run_experiment, run_sweep, ExperimentOutput, Prepared, SeedOutcome};
pub use output::RoundsTable;
pub use solve::{solve_eq, SolveOutput};
pub use verify::{verify, CheckOutcome, Fault, Module};
