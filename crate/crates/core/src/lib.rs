//! Continuous online learning: bifunction losses, online learners,
//! equilibrium solvers and exact regret accounting.

// negated comparisons treat NaN as failure
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod equilibrium;
pub mod error;
pub mod geometry;
pub mod imitation;
pub mod protocol;
pub mod regret;
pub mod synthetic;
pub mod vector;

pub use algorithms::{AlgorithmKind, AlgorithmState, StepSchedule};
pub use equilibrium::EquilibriumSolution;
pub use error::{ColError, Result};
pub use geometry::{DecisionSet, ProjectionResult, SetKind};
pub use protocol::{
    play_round, run, seeded_rng, ColProblem, Constants, FeedbackMode, FeedbackOracle, LabRng,
    NoiseModel, Provenance, RunLog,
};
pub use regret::{compute_report, RegretReport};
