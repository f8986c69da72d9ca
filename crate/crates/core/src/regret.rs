//! Regret accounting against the true per-round losses `l_n = f_{x_n}`.
//!
//! Besides static and dynamic regret, a report carries two machine-checkable
//! upper bounds on dynamic regret in terms of the distance `Delta_n` of the
//! iterates to an equilibrium `x*`:
//!
//! ```text
//! reduction bound:  min{G sum Delta_n, Regret^s_N(x*)} + sum min{beta D Delta_n, beta^2/(2 alpha) Delta_n^2}
//! static bound:     Regret^s_N(x*) + beta^2 / (2 alpha (alpha - beta)) * LinRegret^s_N(x*)   (alpha > beta)
//! ```
//!
//! where `LinRegret^s_N(x*) = sum <grad f_{x_n}(x_n), x_n - x*>` is the static
//! regret of the linearized losses.

use log::warn;

use crate::equilibrium::EquilibriumSolution;
use crate::error::{ColError, Result};
use crate::protocol::{ColProblem, Constants, RunLog};
use crate::vector;

pub const DEFAULT_TOL_INNER: f64 = 1e-9;
const INNER_MAX_ITER: usize = 1_000_000;

/// `argmin_{x in X} f_query(x)`: the problem's closed form when it has one,
/// otherwise projected gradient until the gradient mapping is below `tol_inner`.
pub fn per_round_minimizer(problem: &dyn ColProblem, query: &[f64], tol_inner: f64) -> Result<Vec<f64>> {
    if !(tol_inner > 0.0) {
        return Err(ColError::Config(format!("tol_inner must be positive, got {tol_inner}")));
    }
    if let Some(x) = problem.round_minimizer(query) {
        return Ok(x);
    }
    let set = problem.decision_set();
    let lip = problem.constants().smoothness.max(1e-12);
    let mut x = query.to_vec();
    let mut best = (f64::INFINITY, x.clone());
    for _ in 0..INNER_MAX_ITER {
        let g = problem.grad(query, &x);
        let next = set.project_point(&vector::descend(&x, 1.0 / lip, &g))?;
        let mapping = lip * vector::distance(&x, &next);
        if mapping < best.0 {
            best = (mapping, x.clone());
        }
        if mapping <= tol_inner {
            return Ok(x);
        }
        x = next;
    }
    Err(ColError::NonConvergence {
        iterations: INNER_MAX_ITER,
        residual: best.0,
        best: best.1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub rounds: usize,
    pub tol_inner: f64,
    pub losses: Vec<f64>,
    /// `l_n(x_n*)`
    pub round_minima: Vec<f64>,
    pub minimizers: Vec<Vec<f64>>,
    /// Cumulative dynamic regret.
    pub dynamic_regret: Vec<f64>,
    /// Natural residual of each iterate.
    pub residual: Vec<f64>,
    pub equilibrium: Option<EquilibriumSeries>,
}

/// Series that need an equilibrium `x*`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSeries {
    pub x_star: Vec<f64>,
    pub constants: Constants,
    pub diameter: f64,
    /// Cumulative `Regret^s_N(x*)`.
    pub static_regret: Vec<f64>,
    /// Cumulative static regret of the linearized losses at `x*`.
    pub linearized_static: Vec<f64>,
    /// `||x_n - x*||`
    pub delta: Vec<f64>,
    pub thm2_bound: Vec<f64>,
    /// Present only when `alpha > beta`.
    pub cor1_bound: Option<Vec<f64>>,
}

impl EquilibriumSeries {
    /// Recomputes both bound series from `delta`, `static_regret` and `linearized_static`.
    pub fn recompute_bounds(&mut self) {
        self.thm2_bound = reduction_bound(&self.delta, &self.static_regret, &self.constants, self.diameter);
        self.cor1_bound = static_reduction_bound(&self.static_regret, &self.linearized_static, &self.constants);
    }
}

fn cumulative(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .into_iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Per-prefix reduction bound on dynamic regret.
pub fn reduction_bound(delta: &[f64], static_regret: &[f64], c: &Constants, diameter: f64) -> Vec<f64> {
    let mut delta_sum = 0.0;
    let mut penalty = 0.0;
    delta
        .iter()
        .zip(static_regret)
        .map(|(&d, &s)| {
            delta_sum += d;
            let lipschitz_term = c.beta * diameter * d;
            let quadratic_term = if c.beta == 0.0 {
                0.0
            } else if c.alpha > 0.0 {
                c.beta * c.beta / (2.0 * c.alpha) * d * d
            } else {
                f64::INFINITY
            };
            penalty += lipschitz_term.min(quadratic_term);
            (c.grad_bound * delta_sum).min(s) + penalty
        })
        .collect()
}

/// Per-prefix bound through linearized static regret; `None` unless `alpha > beta`.
pub fn static_reduction_bound(static_regret: &[f64], linearized: &[f64], c: &Constants) -> Option<Vec<f64>> {
    if !(c.alpha > c.beta) {
        return None;
    }
    let factor = c.beta * c.beta / (2.0 * c.alpha * (c.alpha - c.beta));
    Some(
        static_regret
            .iter()
            .zip(linearized)
            .map(|(s, l)| s + factor * l)
            .collect(),
    )
}

/// Cumulative `sum_n l_n(x_n) - l_n(comparator)`.
pub fn static_regret_against(problem: &dyn ColProblem, log: &RunLog, comparator: &[f64]) -> Vec<f64> {
    cumulative(
        log.decisions
            .iter()
            .zip(&log.losses)
            .map(|(x, loss)| loss - problem.eval(x, comparator)),
    )
}

/// Fills every report series. Equilibrium-dependent series are present only
/// when `x_star` is given.
pub fn compute_report(
    problem: &dyn ColProblem,
    log: &RunLog,
    x_star: Option<&EquilibriumSolution>,
    tol_inner: f64,
) -> Result<RegretReport> {
    let set = problem.decision_set();
    for x in &log.decisions {
        if !set.contains(x) {
            return Err(ColError::Domain {
                violation: set.violation(x)?,
            });
        }
    }
    let minimizers = log
        .decisions
        .iter()
        .map(|x| per_round_minimizer(problem, x, tol_inner))
        .collect::<Result<Vec<_>>>()?;
    let round_minima: Vec<f64> = log
        .decisions
        .iter()
        .zip(&minimizers)
        .map(|(x, m)| problem.eval(x, m))
        .collect();
    let dynamic_regret = cumulative(log.losses.iter().zip(&round_minima).map(|(l, m)| l - m));
    let operators: Vec<Vec<f64>> = log.decisions.iter().map(|x| problem.operator(x)).collect();
    let residual = log
        .decisions
        .iter()
        .zip(&operators)
        .map(|(x, fx)| Ok(vector::distance(x, &set.project_point(&vector::descend(x, 1.0, fx))?)))
        .collect::<Result<Vec<_>>>()?;

    let equilibrium = x_star.map(|sol| {
        let xs = &sol.x_star;
        let constants = problem.constants();
        let static_regret = static_regret_against(problem, log, xs);
        let linearized_static = cumulative(
            log.decisions
                .iter()
                .zip(&operators)
                .map(|(x, fx)| vector::dot(fx, &vector::sub(x, xs))),
        );
        let delta = log.decisions.iter().map(|x| vector::distance(x, xs)).collect();
        let mut series = EquilibriumSeries {
            x_star: xs.clone(),
            constants,
            diameter: set.diameter(),
            static_regret,
            linearized_static,
            delta,
            thm2_bound: Vec::new(),
            cor1_bound: None,
        };
        series.recompute_bounds();
        series
    });

    Ok(RegretReport {
        rounds: log.rounds,
        tol_inner,
        losses: log.losses.clone(),
        round_minima,
        minimizers,
        dynamic_regret,
        residual,
        equilibrium,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateCheck {
    pub passed: bool,
    /// `min_N (bound_N + N tol - regret_N)`; negative on failure.
    pub worst_margin: f64,
    /// First round (1-based) at which the inequality fails.
    pub first_violation: Option<usize>,
}

/// Checks `regret_N <= bound_N + N * tol` for every prefix `N`.
pub fn check_prefix_bound(regret: &[f64], bound: &[f64], tol: f64) -> CertificateCheck {
    let mut worst_margin = f64::INFINITY;
    let mut first_violation = None;
    for (i, (r, b)) in regret.iter().zip(bound).enumerate() {
        let n = (i + 1) as f64;
        let margin = b + n * tol - r;
        // NaN margins count as failures
        if !(margin >= 0.0) && first_violation.is_none() {
            first_violation = Some(i + 1);
        }
        if !(margin >= worst_margin) {
            worst_margin = margin;
        }
    }
    CertificateCheck {
        passed: first_violation.is_none(),
        worst_margin,
        first_violation,
    }
}

impl RegretReport {
    fn series(&self) -> Result<&EquilibriumSeries> {
        self.equilibrium.as_ref().ok_or_else(|| {
            ColError::Config("bound certificates need an equilibrium solution".into())
        })
    }

    pub fn check_thm2(&self) -> Result<CertificateCheck> {
        let s = self.series()?;
        Ok(check_prefix_bound(&self.dynamic_regret, &s.thm2_bound, self.tol_inner))
    }

    /// `Ok(None)` when `alpha <= beta` and the bound does not apply.
    pub fn check_cor1(&self) -> Result<Option<CertificateCheck>> {
        let s = self.series()?;
        Ok(s.cor1_bound
            .as_ref()
            .map(|b| check_prefix_bound(&self.dynamic_regret, b, self.tol_inner)))
    }

    /// Dynamic regret never falls below static regret against `comparator`
    /// (up to the inner tolerance budget).
    pub fn check_comparator(&self, problem: &dyn ColProblem, log: &RunLog, comparator: &[f64]) -> CertificateCheck {
        let static_regret = static_regret_against(problem, log, comparator);
        check_prefix_bound(&static_regret, &self.dynamic_regret, self.tol_inner)
    }

    /// Fitted exponent of cumulative dynamic regret over `[lo, hi]`.
    pub fn dynamic_rate(&self, lo: usize, hi: usize) -> Result<f64> {
        fit_regret_rate(&self.dynamic_regret, lo, hi)
    }
}

/// Default fitting window `[N/10, N]`, with the lower end at least 10.
pub fn default_window(rounds: usize) -> (usize, usize) {
    ((rounds / 10).max(10), rounds)
}

/// Least-squares slope of `log(series[N-1])` against `log N` for `N` in
/// `[lo, hi]`; non-positive entries are skipped.
pub fn fit_regret_rate(series: &[f64], lo: usize, hi: usize) -> Result<f64> {
    if lo < 10 || hi > series.len() || lo >= hi {
        return Err(ColError::Config(format!(
            "fitting window [{lo}, {hi}] invalid for a series of length {}",
            series.len()
        )));
    }
    let mut points = Vec::with_capacity(hi - lo + 1);
    let mut skipped = 0usize;
    for n in lo..=hi {
        let r = series[n - 1];
        if r > 0.0 && r.is_finite() {
            points.push(((n as f64).ln(), r.ln()));
        } else {
            skipped += 1;
        }
    }
    if skipped > 0 {
        warn!("rate fit skipped {skipped} non-positive regret values in [{lo}, {hi}]");
    }
    if points.len() < 2 {
        return Err(ColError::RateUndefined(format!(
            "no positive regret values in [{lo}, {hi}]"
        )));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    // offset by the first ordinate so a flat series fits to exactly zero
    let y0 = points[0].1;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - y0)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(ColError::RateUndefined("degenerate window".into()));
    }
    Ok(sxy / sxx)
}
