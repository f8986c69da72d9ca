//! Equilibrium side of the problem: the variational inequality
//! `VI(X, F)` with `F(x) = grad f_x(x)` and the equilibrium problem with
//! bifunction `Phi(x, x') = f_x(x') - f_x(x)`, whose solution sets coincide.

use crate::error::{ColError, Result};
use crate::geometry::DecisionSet;
use crate::protocol::{ColProblem, Constants, LabRng};
use crate::vector;

pub const DEFAULT_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub x_star: Vec<f64>,
    pub natural_residual: f64,
    pub iterations: usize,
    pub solver: &'static str,
}

/// `||x - P_X(x - F(x))||`, zero exactly at solutions of `VI(X, F)`.
pub fn natural_residual<F>(set: &DecisionSet, operator: F, x: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let fx = operator(x);
    let p = set.project_point(&vector::descend(x, 1.0, &fx))?;
    Ok(vector::distance(x, &p))
}

/// Extragradient step size from the problem constants: `mu / (L + beta)^2`
/// in the strongly monotone case, `1 / (2 (L + beta))` otherwise.
pub fn default_step(constants: &Constants) -> f64 {
    let lip = (constants.smoothness + constants.beta).max(1e-12);
    if constants.strongly_monotone() {
        constants.mu() / (lip * lip)
    } else {
        1.0 / (2.0 * lip)
    }
}

/// Extragradient iterations from `start` until the natural residual drops to `tolerance`.
pub fn solve_vi<F>(
    set: &DecisionSet,
    operator: F,
    start: &[f64],
    step: f64,
    tolerance: f64,
    max_iter: usize,
) -> Result<EquilibriumSolution>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(tolerance > 0.0) {
        return Err(ColError::Config(format!("tolerance must be positive, got {tolerance}")));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(ColError::Config(format!("step must be positive, got {step}")));
    }
    let mut x = set.project_point(start)?;
    let mut best = (f64::INFINITY, x.clone());
    for iteration in 0..=max_iter {
        let fx = operator(&x);
        if !vector::all_finite(&fx) {
            return Err(ColError::Numeric(format!("operator returned {fx:?}")));
        }
        let residual = vector::distance(&x, &set.project_point(&vector::descend(&x, 1.0, &fx))?);
        if residual < best.0 {
            best = (residual, x.clone());
        }
        if residual <= tolerance {
            return Ok(EquilibriumSolution {
                x_star: x,
                natural_residual: residual,
                iterations: iteration,
                solver: "extragradient",
            });
        }
        if iteration == max_iter {
            break;
        }
        let half = set.project_point(&vector::descend(&x, step, &fx))?;
        let f_half = operator(&half);
        x = set.project_point(&vector::descend(&x, step, &f_half))?;
    }
    Err(ColError::NonConvergence {
        iterations: max_iter,
        residual: best.0,
        best: best.1,
    })
}

/// Solves the problem's VI from the set's center with the default step.
pub fn solve_problem(problem: &dyn ColProblem, tolerance: f64) -> Result<EquilibriumSolution> {
    solve_problem_from(problem, &problem.decision_set().center(), tolerance)
}

/// As [`solve_problem`] from an explicit start. When the problem is
/// strongly monotone the residual target is tightened by the error-bound
/// factor `mu / (1 + L + beta)`, so the returned point is also within
/// `tolerance` of the unique solution.
pub fn solve_problem_from(
    problem: &dyn ColProblem,
    start: &[f64],
    tolerance: f64,
) -> Result<EquilibriumSolution> {
    let c = problem.constants();
    let target = tolerance * error_bound_factor(&c);
    solve_vi(
        problem.decision_set(),
        |x| problem.operator(x),
        start,
        default_step(&c),
        target,
        DEFAULT_MAX_ITER,
    )
}

/// `min(1, mu / (1 + L + beta))`: with `mu`-strong monotonicity,
/// `||x - x*|| <= residual(x) / factor`.
pub fn error_bound_factor(c: &Constants) -> f64 {
    if c.strongly_monotone() {
        (c.mu() / (1.0 + c.smoothness + c.beta)).min(1.0)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpCheck {
    pub is_solution: bool,
    /// `min` over the grid of `Phi(candidate, x)`.
    pub worst_violation: f64,
    pub worst_point: Vec<f64>,
}

pub const EP_TOLERANCE: f64 = 1e-6;
pub const EP_MAX_DIMENSION: usize = 3;

/// Brute-force check of `Phi(x_c, x) >= 0` over a regular grid of the
/// set's bounding box, each grid point mapped into the set by projection.
pub fn check_ep_solution(
    problem: &dyn ColProblem,
    candidate: &[f64],
    grid_resolution: usize,
) -> Result<EpCheck> {
    let set = problem.decision_set();
    let d = set.dimension();
    if d > EP_MAX_DIMENSION {
        return Err(ColError::Unsupported {
            algorithm: "ep grid check",
            reason: format!("dimension {d} exceeds {EP_MAX_DIMENSION}"),
        });
    }
    if grid_resolution < 2 {
        return Err(ColError::Config("grid resolution must be at least 2".into()));
    }
    let (lower, upper) = set.bounding_box();
    let base = problem.eval(candidate, candidate);
    let mut worst = EpCheck {
        is_solution: true,
        worst_violation: f64::INFINITY,
        worst_point: candidate.to_vec(),
    };
    let total = grid_resolution.pow(d as u32);
    let mut point = vec![0.0; d];
    for index in 0..total {
        let mut rest = index;
        for i in 0..d {
            let k = rest % grid_resolution;
            rest /= grid_resolution;
            let t = k as f64 / (grid_resolution - 1) as f64;
            point[i] = lower[i] + t * (upper[i] - lower[i]);
        }
        let feasible = set.project_point(&point)?;
        let phi = problem.eval(candidate, &feasible) - base;
        if phi < worst.worst_violation {
            worst.worst_violation = phi;
            worst.worst_point = feasible;
        }
    }
    worst.is_solution = worst.worst_violation >= -EP_TOLERANCE;
    Ok(worst)
}

/// Smallest observed `<F(x) - F(y), x - y> / ||x - y||^2` over sampled pairs.
pub fn monotonicity_certificate(
    problem: &dyn ColProblem,
    num_pairs: usize,
    rng: &mut LabRng,
) -> Result<f64> {
    let set = problem.decision_set();
    let mut worst = f64::INFINITY;
    let mut drawn = 0;
    let mut attempts = 0;
    while drawn < num_pairs.max(1) {
        attempts += 1;
        if attempts > 1000 * num_pairs.max(1) {
            return Err(ColError::Numeric("could not sample distinct pairs".into()));
        }
        let x = set.sample(rng);
        let y = set.sample(rng);
        let diff = vector::sub(&x, &y);
        let gap = vector::dot(&diff, &diff);
        if gap.sqrt() < 1e-12 {
            continue;
        }
        let fdiff = vector::sub(&problem.operator(&x), &problem.operator(&y));
        worst = worst.min(vector::dot(&fdiff, &diff) / gap);
        drawn += 1;
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::seeded_rng;
    use crate::synthetic::{q0, q1, Matrix, QuadraticCol};
    use approx::assert_abs_diff_eq;

    #[test]
    fn residual_examples() {
        let q = q0();
        let set = q.decision_set();
        assert_eq!(natural_residual(set, |x| q.operator(x), &[0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            natural_residual(set, |x| q.operator(x), &[1.0, 1.0]).unwrap(),
            0.5f64.sqrt(),
            epsilon = 1e-15
        );
        // interior zero of F
        assert_eq!(
            natural_residual(set, |x| x.iter().map(|v| v - 0.3).collect(), &[0.3, 0.3]).unwrap(),
            0.0
        );
    }

    #[test]
    fn solves_reference_instances() {
        let s0 = solve_problem(&q0(), 1e-10).unwrap();
        assert!(vector::norm(&s0.x_star) <= 1e-9);
        assert!(s0.natural_residual <= 1e-10);
        let s1 = solve_problem(&q1(), 1e-10).unwrap();
        assert!(vector::distance(&s1.x_star, &[0.4, 0.4]) <= 1e-9);
    }

    #[test]
    fn distinct_starts_agree() {
        let q = q1();
        let a = solve_problem_from(&q, &[1.0, -1.0], 1e-10).unwrap();
        let b = solve_problem_from(&q, &[-1.0, 1.0], 1e-10).unwrap();
        assert!(vector::distance(&a.x_star, &b.x_star) <= 2e-10);
    }

    #[test]
    fn non_convergence_carries_best_iterate() {
        let q = q0();
        let err = solve_vi(q.decision_set(), |x| q.operator(x), &[1.0, 1.0], 1e-3, 1e-12, 5).unwrap_err();
        match err {
            ColError::NonConvergence { iterations, residual, best } => {
                assert_eq!(iterations, 5);
                assert!(residual > 1e-12);
                assert_eq!(best.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ep_check_on_q0() {
        let q = q0();
        let good = check_ep_solution(&q, &[0.0, 0.0], 101).unwrap();
        assert!(good.is_solution);
        assert!(good.worst_violation >= -1e-12);
        let bad = check_ep_solution(&q, &[1.0, 1.0], 101).unwrap();
        assert!(!bad.is_solution);
        assert!(bad.worst_violation <= -0.2);
    }

    #[test]
    fn ep_check_rejects_large_dimension() {
        let set = DecisionSet::cube(4, 1.0).unwrap();
        let q = QuadraticCol::new(Matrix::scaled_identity(4, 0.5), vec![0.0; 4], 1.0, set).unwrap();
        assert!(matches!(
            check_ep_solution(&q, &[0.0; 4], 3),
            Err(ColError::Unsupported { .. })
        ));
    }

    #[test]
    fn monotonicity_of_scaled_identity_is_exact() {
        let mut rng = seeded_rng(3);
        let r = monotonicity_certificate(&q0(), 1000, &mut rng).unwrap();
        assert_abs_diff_eq!(r, 0.5, epsilon = 1e-12);
        let set = DecisionSet::cube(2, 1.0).unwrap();
        let neg = QuadraticCol::new(Matrix::scaled_identity(2, -0.5), vec![0.0; 2], 1.0, set).unwrap();
        let r = monotonicity_certificate(&neg, 1000, &mut rng).unwrap();
        assert_abs_diff_eq!(r, 1.5, epsilon = 1e-12);
        assert!(r >= neg.constants().mu());
    }
}
