//! `solve-eq`: equilibrium of a configured problem plus the brute-force EP check.

use std::fmt::Write as _;

use col_core::equilibrium::{check_ep_solution, solve_problem, EpCheck};
use col_core::{ColError, EquilibriumSolution};

use crate::config::{ExperimentConfig, Instance};
use crate::error::LabResult;
use crate::output::fmt_f64;

pub const SOLVE_TOLERANCE: f64 = 1e-10;
pub const EP_GRID: usize = 101;
/// Largest dimension for which the EP grid check runs.
pub const EP_CHECK_DIMENSION: usize = 2;

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub solution: EquilibriumSolution,
    pub ep: Option<EpCheck>,
}

pub fn solve_eq(config: &ExperimentConfig) -> LabResult<SolveOutput> {
    let instance = Instance::build(config)?;
    let problem = instance.problem();
    let solution = solve_problem(problem, SOLVE_TOLERANCE)?;
    let ep = if problem.dimension() <= EP_CHECK_DIMENSION {
        let check = check_ep_solution(problem, &solution.x_star, EP_GRID)?;
        if !check.is_solution {
            return Err(ColError::Numeric(format!(
                "solver output fails the EP check: Phi = {:e} at {:?}",
                check.worst_violation, check.worst_point
            ))
            .into());
        }
        Some(check)
    } else {
        None
    };
    Ok(SolveOutput { solution, ep })
}

impl SolveOutput {
    pub fn render(&self) -> String {
        let s = &self.solution;
        let x: Vec<String> = s.x_star.iter().map(|v| fmt_f64(*v)).collect();
        let mut out = String::new();
        let _ = writeln!(out, "x_star = [{}]", x.join(", "));
        let _ = writeln!(out, "natural_residual = {}", fmt_f64(s.natural_residual));
        let _ = writeln!(out, "iterations = {}", s.iterations);
        let _ = writeln!(out, "solver = {}", s.solver);
        if let Some(ep) = &self.ep {
            let _ = writeln!(out, "ep_worst_violation = {}", fmt_f64(ep.worst_violation));
            let _ = writeln!(out, "ep_is_solution = {}", ep.is_solution);
        }
        out
    }
}
