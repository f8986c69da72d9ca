//! Invariant verification suite behind `col-lab verify`.
//!
//! Each module contributes named checks; a check passes or fails and
//! carries a short detail string with the measured slack. Negative controls
//! corrupt an input on purpose and pass only when the corruption is caught.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use col_core::equilibrium::{
    check_ep_solution, monotonicity_certificate, natural_residual, solve_problem, solve_problem_from, solve_vi,
    default_step, DEFAULT_MAX_ITER,
};
use col_core::imitation::{
    chain_instance, lazy_chain_mdp, self_loop_instance, visitation_frequencies, IlProblem, Policy,
};
use col_core::protocol::{certify_alpha, certify_beta, gradient_check, NoiseModel};
use col_core::regret::{per_round_minimizer, CertificateCheck};
use col_core::synthetic::{q0, q1, random_quadratic, Matrix, QuadraticCol};
use col_core::{
    compute_report, play_round, run, seeded_rng, vector, AlgorithmKind, AlgorithmState, ColProblem, Constants,
    DecisionSet, EquilibriumSolution, FeedbackMode, FeedbackOracle, LabRng, RegretReport, RunLog, StepSchedule,
};
use rand::Rng;

use crate::config::{default_schedule, ExperimentConfig};
use crate::error::{LabError, LabResult};
use crate::experiment::{rounds_file, run_experiment};
use crate::output::RoundsTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Module {
    Core,
    Geometry,
    Algorithms,
    Equilibrium,
    Regret,
    ProblemsSynthetic,
    ProblemsIl,
    Harness,
}

impl Module {
    pub fn all() -> [Module; 8] {
        [
            Module::Core,
            Module::Geometry,
            Module::Algorithms,
            Module::Equilibrium,
            Module::Regret,
            Module::ProblemsSynthetic,
            Module::ProblemsIl,
            Module::Harness,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            Module::Core => "core",
            Module::Geometry => "geometry",
            Module::Algorithms => "algorithms",
            Module::Equilibrium => "equilibrium",
            Module::Regret => "regret",
            Module::ProblemsSynthetic => "problems_synthetic",
            Module::ProblemsIl => "problems_il",
            Module::Harness => "harness",
        }
    }
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Module {
    type Err = LabError;

    fn from_str(s: &str) -> LabResult<Self> {
        Module::all()
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| LabError::Config(format!("unknown verify scope {s:?}")))
    }
}

/// Parses `all` or a module name.
pub fn parse_scope(scope: &str) -> LabResult<Vec<Module>> {
    if scope == "all" {
        Ok(Module::all().to_vec())
    } else {
        Ok(vec![scope.parse()?])
    }
}

/// Deliberate corruption applied to the real checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Zeroes the distance-to-equilibrium series before bounds are formed.
    Delta,
    /// Offsets every analytic gradient.
    Gradient,
}

impl FromStr for Fault {
    type Err = LabError;

    fn from_str(s: &str) -> LabResult<Self> {
        match s {
            "none" => Ok(Fault::None),
            "delta" => Ok(Fault::Delta),
            "gradient" => Ok(Fault::Gradient),
            other => Err(LabError::Config(format!("unknown fault {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub module: Module,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}::{} {}", self.module, self.name, self.detail)
    }
}

type CheckResult = LabResult<(bool, String)>;

struct Suite {
    module: Module,
    out: Vec<CheckOutcome>,
}

impl Suite {
    fn new(module: Module) -> Self {
        Self { module, out: Vec::new() }
    }

    fn check(&mut self, name: &str, f: impl FnOnce() -> CheckResult) {
        let (passed, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        log::debug!("{}::{name} {passed}", self.module);
        self.out.push(CheckOutcome {
            module: self.module,
            name: name.to_owned(),
            passed,
            detail,
        });
    }
}

/// Runs the suites of `modules` in order.
pub fn verify(modules: &[Module], fault: Fault) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for &m in modules {
        let mut s = Suite::new(m);
        match m {
            Module::Core => core_checks(&mut s, fault),
            Module::Geometry => geometry_checks(&mut s),
            Module::Algorithms => algorithm_checks(&mut s),
            Module::Equilibrium => equilibrium_checks(&mut s),
            Module::Regret => regret_checks(&mut s, fault),
            Module::ProblemsSynthetic => synthetic_checks(&mut s),
            Module::ProblemsIl => il_checks(&mut s, fault),
            Module::Harness => harness_checks(&mut s),
        }
        out.extend(s.out);
    }
    out
}

pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

// ---------------------------------------------------------------- fixtures

/// Gradient offset by a fixed vector; used to show the gradient check can fail.
struct OffsetGradient<'a> {
    inner: &'a dyn ColProblem,
    offset: f64,
}

impl ColProblem for OffsetGradient<'_> {
    fn decision_set(&self) -> &DecisionSet {
        self.inner.decision_set()
    }

    fn constants(&self) -> Constants {
        self.inner.constants()
    }

    fn eval(&self, query: &[f64], decision: &[f64]) -> f64 {
        self.inner.eval(query, decision)
    }

    fn grad(&self, query: &[f64], decision: &[f64]) -> Vec<f64> {
        self.inner.grad(query, decision).iter().map(|g| g + self.offset).collect()
    }
}

/// Two-dimensional quadratic on the unit ball with a scaled rotation.
pub fn ball_quadratic() -> QuadraticCol {
    let a = Matrix::from_rows(&[vec![0.0, -0.6], vec![0.6, 0.0]]).expect("square");
    QuadraticCol::new(a, vec![0.3, -0.2], 1.5, DecisionSet::ball(vec![0.0, 0.0], 1.0).expect("ball"))
        .expect("valid instance")
}

/// Anisotropic box instance with a diagonal map.
pub fn diagonal_quadratic() -> QuadraticCol {
    QuadraticCol::new(
        Matrix::diagonal(&[0.9, 0.1]),
        vec![0.5, -0.5],
        1.0,
        DecisionSet::boxed(vec![-1.0, -0.5], vec![1.0, 2.0]).expect("box"),
    )
    .expect("valid instance")
}

/// `A = 1.2 I`: no strong monotonicity; the origin is still an equilibrium.
pub fn expanding_quadratic() -> QuadraticCol {
    QuadraticCol::new(
        Matrix::scaled_identity(2, 1.2),
        vec![0.0, 0.0],
        1.0,
        DecisionSet::cube(2, 1.0).expect("box"),
    )
    .expect("valid instance")
}

/// Four-state lazy ring, horizon 4, with a mixed expert.
pub fn lazy_ring_instance() -> col_core::Result<IlProblem> {
    let mdp = lazy_chain_mdp(4, 4, 0.9)?;
    let expert = Policy::new(4, 2, vec![1.0, 0.0, 0.3, 0.7, 0.0, 1.0, 0.5, 0.5])?;
    IlProblem::new(mdp, expert, 0.05)
}

struct Named {
    name: &'static str,
    problem: Box<dyn ColProblem>,
}

fn named(name: &'static str, problem: impl ColProblem + 'static) -> Named {
    Named {
        name,
        problem: Box::new(problem),
    }
}

fn quadratic_fixtures() -> Vec<Named> {
    vec![
        named("q0", q0()),
        named("q1", q1()),
        named("ball", ball_quadratic()),
        named("diagonal", diagonal_quadratic()),
        named("expanding", expanding_quadratic()),
    ]
}

fn il_fixtures() -> LabResult<Vec<Named>> {
    Ok(vec![
        named("chain", chain_instance()?),
        named("self_loop", self_loop_instance(3, 0.2)?),
        named("lazy_ring", lazy_ring_instance()?),
    ])
}

fn all_fixtures() -> LabResult<Vec<Named>> {
    let mut v = quadratic_fixtures();
    v.extend(il_fixtures()?);
    Ok(v)
}

fn stochastic_mode(problem: &dyn ColProblem) -> FeedbackMode {
    let mut rng = seeded_rng(0);
    let x = problem.decision_set().center();
    if problem.sample_gradient(&x, &mut rng).is_some() {
        FeedbackMode::StochasticGradient(NoiseModel::Rollout)
    } else {
        FeedbackMode::StochasticGradient(NoiseModel::Gaussian { sigma: 0.3 })
    }
}

fn run_with(
    problem: &dyn ColProblem,
    kind: AlgorithmKind,
    schedule: StepSchedule,
    x1: Vec<f64>,
    mode: FeedbackMode,
    seed: u64,
    rounds: usize,
) -> LabResult<RunLog> {
    let mut oracle = FeedbackOracle::new(mode, seed);
    let mut state = AlgorithmState::new(kind, schedule, x1)?;
    Ok(run(problem, &mut oracle, &mut state, rounds)?)
}

/// A start far from the equilibrium: the feasible sample farthest from it among a few draws.
fn far_start(problem: &dyn ColProblem, x_star: &[f64], rng: &mut LabRng) -> Vec<f64> {
    (0..16)
        .map(|_| problem.decision_set().sample(rng))
        .max_by(|a, b| vector::distance(a, x_star).total_cmp(&vector::distance(b, x_star)))
        .expect("non-empty")
}

fn fmt_fails(fails: &[String]) -> String {
    if fails.is_empty() {
        String::new()
    } else {
        format!(" failures: {}", fails.join("; "))
    }
}

// ---------------------------------------------------------------- core

fn core_checks(s: &mut Suite, fault: Fault) {
    let fixtures = match all_fixtures() {
        Ok(f) => f,
        Err(e) => return s.check("fixtures", || Err(e)),
    };
    let offset = if fault == Fault::Gradient { 1e-3 } else { 0.0 };
    s.check("gradient_consistency", || {
        let mut rng = seeded_rng(101);
        let mut worst: f64 = 0.0;
        for f in &fixtures {
            let p = OffsetGradient {
                inner: f.problem.as_ref(),
                offset,
            };
            worst = worst.max(gradient_check(&p, 20, 1e-5, &mut rng));
        }
        Ok((worst < 1e-5, format!("max relative error {worst:.3e} (limit 1e-5)")))
    });
    s.check("gradient_check_negative_control", || {
        let mut rng = seeded_rng(102);
        let q = q1();
        let bad = OffsetGradient { inner: &q, offset: 1e-3 };
        let err = gradient_check(&bad, 20, 1e-5, &mut rng);
        Ok((err >= 1e-5, format!("offset gradient error {err:.3e} detected")))
    });
    s.check("determinism", || {
        let mut fails = Vec::new();
        for f in &fixtures {
            let p = f.problem.as_ref();
            let mode = stochastic_mode(p);
            let schedule = StepSchedule::InverseSqrt(0.5);
            let go = || run_with(p, AlgorithmKind::OnlineGradientDescent, schedule, p.decision_set().center(), mode, 23, 200);
            if !go()?.same_trajectory(&go()?) {
                fails.push(f.name.to_owned());
            }
        }
        Ok((fails.is_empty(), format!("{} stochastic runs repeated bitwise{}", fixtures.len(), fmt_fails(&fails))))
    });
    s.check("feedback_unbiasedness", || {
        let mut worst_ratio: f64 = 0.0;
        for f in &fixtures {
            let p = f.problem.as_ref();
            let mut rng = seeded_rng(31);
            let x = p.decision_set().sample(&mut rng);
            let exact = p.operator(&x);
            let mut oracle = FeedbackOracle::new(stochastic_mode(p), 37);
            let draws = 10_000;
            let mut sum = vec![0.0; exact.len()];
            let mut second = 0.0;
            for _ in 0..draws {
                let g = oracle.feedback(p, &x)?;
                second += vector::distance_sq(&g, &exact);
                for (acc, v) in sum.iter_mut().zip(&g) {
                    *acc += v;
                }
            }
            let sigma = (second / draws as f64).sqrt();
            let limit = 3.0 * sigma / 100.0;
            for (m, e) in sum.iter().zip(&exact) {
                let gap = (m / draws as f64 - e).abs();
                worst_ratio = worst_ratio.max(if limit > 0.0 { gap / limit } else if gap > 0.0 { f64::INFINITY } else { 0.0 });
            }
        }
        Ok((worst_ratio <= 1.0, format!("worst |mean - grad| / (3 sigma / 100) = {worst_ratio:.3}")))
    });
    s.check("opponent_consistency", || {
        let mut fails = Vec::new();
        for f in &fixtures {
            let p = f.problem.as_ref();
            let mut rng = seeded_rng(41);
            let x = p.decision_set().sample(&mut rng);
            let mut oracle = FeedbackOracle::new(stochastic_mode(p), 43);
            let (a, _) = play_round(p, &mut oracle, &x)?;
            let (b, _) = play_round(p, &mut oracle, &x)?;
            if a.to_bits() != b.to_bits() {
                fails.push(f.name.to_owned());
            }
        }
        Ok((fails.is_empty(), format!("repeated rounds give identical losses{}", fmt_fails(&fails))))
    });
}

// ---------------------------------------------------------------- geometry

fn random_set(rng: &mut LabRng) -> LabResult<DecisionSet> {
    Ok(match rng.random_range(0..3) {
        0 => {
            let d = rng.random_range(2..5);
            let lower: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..0.0)).collect();
            let upper = lower.iter().map(|l| l + rng.random_range(0.1..3.0)).collect();
            DecisionSet::boxed(lower, upper)?
        }
        1 => {
            let d = rng.random_range(2..5);
            let c = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            DecisionSet::ball(c, rng.random_range(0.2..2.0))?
        }
        _ => {
            let k = rng.random_range(2..5);
            let floor = rng.random_range(0.0..0.9 / k as f64);
            DecisionSet::simplices(rng.random_range(1..3), k, floor)?
        }
    })
}

fn random_direction(set: &DecisionSet, rng: &mut LabRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..set.dimension()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = set.tangent_component(&v);
        let n = vector::norm(&t);
        if n > 1e-3 {
            return t.iter().map(|x| x / n).collect();
        }
    }
}

fn geometry_checks(s: &mut Suite) {
    s.check("projection_optimality", || {
        let mut rng = seeded_rng(201);
        let mut worst = f64::INFINITY;
        let grid = 61;
        for _ in 0..1000 {
            let set = random_set(&mut rng)?;
            let y: Vec<f64> = (0..set.dimension()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = set.project_point(&y)?;
            let best = vector::distance(&p, &y);
            let u = random_direction(&set, &mut rng);
            let mut v = random_direction(&set, &mut rng);
            let along = vector::dot(&u, &v);
            v = v.iter().zip(&u).map(|(a, b)| a - along * b).collect();
            let nv = vector::norm(&v).max(1e-12);
            v.iter_mut().for_each(|x| *x /= nv);
            let radius = set.diameter();
            for i in 0..grid {
                for j in 0..grid {
                    let a = radius * (2.0 * i as f64 / (grid - 1) as f64 - 1.0);
                    let b = radius * (2.0 * j as f64 / (grid - 1) as f64 - 1.0);
                    let z: Vec<f64> = p.iter().zip(&u).zip(&v).map(|((p, u), v)| p + a * u + b * v).collect();
                    if set.contains(&z) {
                        worst = worst.min(vector::distance(&z, &y) - best);
                    }
                }
            }
        }
        Ok((worst >= -1e-6, format!("min grid gap {worst:.3e} over 1000 instances (limit -1e-6)")))
    });
    s.check("simplex_projection_brute_force", || {
        let mut rng = seeded_rng(202);
        let mut worst: f64 = 0.0;
        let steps = 400;
        for _ in 0..50 {
            let floor = rng.random_range(0.0..0.3);
            let set = DecisionSet::simplices(1, 3, floor)?;
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = set.project_point(&y)?;
            let mut best = f64::INFINITY;
            let free = 1.0 - 3.0 * floor;
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let a = floor + free * i as f64 / steps as f64;
                    let b = floor + free * j as f64 / steps as f64;
                    let z = [a, b, 1.0 - a - b];
                    best = best.min(vector::distance(&z, &y));
                }
            }
            worst = worst.max(vector::distance(&p, &y) - best);
        }
        Ok((worst <= 1e-6, format!("projection exceeds grid optimum by at most {worst:.3e}")))
    });
    s.check("nonexpansiveness", || {
        let mut rng = seeded_rng(203);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            let set = random_set(&mut rng)?;
            let y1: Vec<f64> = (0..set.dimension()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y2: Vec<f64> = (0..set.dimension()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let gap = vector::distance(&set.project_point(&y1)?, &set.project_point(&y2)?) - vector::distance(&y1, &y2);
            worst = worst.max(gap);
        }
        Ok((worst <= 1e-12, format!("max ||Py1 - Py2|| - ||y1 - y2|| = {worst:.3e}")))
    });
    s.check("idempotence", || {
        let mut rng = seeded_rng(204);
        let mut bad = 0;
        for _ in 0..10_000 {
            let set = random_set(&mut rng)?;
            let y: Vec<f64> = (0..set.dimension()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = set.project_point(&y)?;
            if set.project_point(&p)? != p {
                bad += 1;
            }
        }
        Ok((bad == 0, format!("{bad} of 10000 projections moved on reprojection")))
    });
}

// ---------------------------------------------------------------- algorithms

/// Equilibrium accurate enough to serve as the contraction reference.
pub fn reference_equilibrium(problem: &dyn ColProblem) -> LabResult<EquilibriumSolution> {
    Ok(solve_problem(problem, 1e-14)?)
}

/// Largest violation of the geometric OGD bound
/// `||x_n - x*||^2 <= rho^{n-1} ||x_1 - x*||^2` relative to its right side;
/// `floor` is an absolute allowance for the accuracy of `x*`.
pub fn contraction_violation(
    problem: &dyn ColProblem,
    eta: f64,
    x1: Vec<f64>,
    x_star: &[f64],
    rounds: usize,
    floor: f64,
) -> LabResult<f64> {
    let c = problem.constants();
    let rho = c.contraction_factor(eta);
    let log = run_with(
        problem,
        AlgorithmKind::OnlineGradientDescent,
        StepSchedule::Constant(eta),
        x1,
        FeedbackMode::DeterministicGradient,
        0,
        rounds,
    )?;
    let first = vector::distance_sq(&log.decisions[0], x_star);
    let mut worst = f64::NEG_INFINITY;
    for (n, x) in log.decisions.iter().enumerate() {
        let bound = rho.powi(n as i32) * first;
        let err = vector::distance_sq(x, x_star);
        worst = worst.max((err - bound - floor) / bound.max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

/// Squared-distance allowance for a reference equilibrium at residual `r`.
pub fn equilibrium_floor(c: &Constants, solution: &EquilibriumSolution) -> f64 {
    let err = solution.natural_residual / col_core::equilibrium::error_bound_factor(c) + 4.0 * f64::EPSILON;
    err * err
}

fn algorithm_checks(s: &mut Suite) {
    let fixtures = match all_fixtures() {
        Ok(f) => f,
        Err(e) => return s.check("fixtures", || Err(e)),
    };
    s.check("feasibility", || {
        let mut runs = 0;
        let mut worst: f64 = 0.0;
        for f in &fixtures {
            let p = f.problem.as_ref();
            for kind in AlgorithmKind::all() {
                for stochastic in [false, true] {
                    let mode = if stochastic { stochastic_mode(p) } else { FeedbackMode::DeterministicGradient };
                    let schedule = default_schedule(p, stochastic, None);
                    let mut rng = seeded_rng(301 + runs);
                    let x1 = p.decision_set().sample(&mut rng);
                    let log = run_with(p, kind, schedule, x1, mode, 300 + runs, 200)?;
                    for x in &log.decisions {
                        worst = worst.max(p.decision_set().violation(x)?);
                    }
                    runs += 1;
                }
            }
        }
        Ok((worst <= 1e-12, format!("{runs} runs, max set violation {worst:.3e}")))
    });
    s.check("ogd_contraction", || {
        let mut worst = f64::NEG_INFINITY;
        let mut count = 0;
        let mut rng = seeded_rng(311);
        for f in &fixtures {
            let p = f.problem.as_ref();
            let c = p.constants();
            if !c.strongly_monotone() {
                continue;
            }
            let sol = reference_equilibrium(p)?;
            let floor = equilibrium_floor(&c, &sol);
            let base = c.mu() / (c.smoothness + c.beta).powi(2);
            for eta in [base, 0.9 * c.step_ceiling()] {
                let x1 = far_start(p, &sol.x_star, &mut rng);
                worst = worst.max(contraction_violation(p, eta, x1, &sol.x_star, 500, floor)?);
                count += 1;
            }
        }
        Ok((worst <= 1e-9, format!("{count} runs, worst relative excess {worst:.3e} (limit 1e-9)")))
    });
    s.check("static_regret_sanity", || {
        let mut worst = f64::NEG_INFINITY;
        for f in &fixtures {
            let p = f.problem.as_ref();
            let c = p.constants();
            let d = p.decision_set().diameter();
            let sol = solve_problem(p, 1e-10)?;
            let mut rng = seeded_rng(321);
            let x1 = far_start(p, &sol.x_star, &mut rng);
            let log = run_with(
                p,
                AlgorithmKind::OnlineGradientDescent,
                StepSchedule::InverseSqrt(d / c.grad_bound),
                x1,
                FeedbackMode::DeterministicGradient,
                0,
                10_000,
            )?;
            let report = compute_report(p, &log, Some(&sol), 1e-9)?;
            let eq = report.equilibrium.expect("equilibrium supplied");
            for (n, r) in eq.static_regret.iter().enumerate() {
                let envelope = 1.5 * c.grad_bound * d * ((n + 1) as f64).sqrt();
                worst = worst.max(r / envelope);
            }
        }
        Ok((worst <= 1.0, format!("max Regret^s_N / (1.5 G D sqrt N) = {worst:.4}")))
    });
}

// ---------------------------------------------------------------- equilibrium

fn equilibrium_checks(s: &mut Suite) {
    let fixtures = quadratic_fixtures();
    s.check("ep_vi_coincidence", || {
        let mut worst = f64::INFINITY;
        for f in fixtures.iter().filter(|f| f.problem.dimension() <= 2) {
            let sol = solve_problem(f.problem.as_ref(), 1e-10)?;
            let ep = check_ep_solution(f.problem.as_ref(), &sol.x_star, 101)?;
            worst = worst.min(ep.worst_violation);
        }
        Ok((worst >= -1e-6, format!("min Phi(x*, x) on 101^2 grids = {worst:.3e}")))
    });
    s.check("residual_soundness", || {
        let mut worst = f64::NEG_INFINITY;
        let mut all = fixtures;
        all.extend(il_fixtures()?);
        for f in &all {
            let p = f.problem.as_ref();
            let c = p.constants();
            let set = p.decision_set();
            for tol in [1e-2, 1e-4, 1e-6, 1e-8] {
                let sol = match solve_vi(set, |x| p.operator(x), &set.center(), default_step(&c), tol, DEFAULT_MAX_ITER) {
                    Ok(sol) => sol,
                    Err(e) => return Err(e.into()),
                };
                let x = &sol.x_star;
                let r = natural_residual(set, |y| p.operator(y), x)?;
                let m = per_round_minimizer(p, x, 1e-12)?;
                let gap = p.eval(x, x) - p.eval(x, &m);
                let bound = c.grad_bound * r + c.beta * c.beta / (2.0 * c.alpha) * r * r;
                worst = worst.max(gap - bound);
            }
        }
        Ok((worst <= 1e-12, format!("max (per-round regret at x - bound) = {worst:.3e}")))
    });
    s.check("uniqueness", || {
        let tol = 1e-8;
        let mut worst: f64 = 0.0;
        let mut all = quadratic_fixtures();
        all.extend(il_fixtures()?);
        let mut rng = seeded_rng(401);
        for f in all.iter().filter(|f| f.problem.constants().strongly_monotone()) {
            let p = f.problem.as_ref();
            let sols = (0..10)
                .map(|_| solve_problem_from(p, &p.decision_set().sample(&mut rng), tol))
                .collect::<col_core::Result<Vec<_>>>()?;
            for a in &sols {
                for b in &sols {
                    worst = worst.max(vector::distance(&a.x_star, &b.x_star));
                }
            }
        }
        Ok((worst <= 2.0 * tol, format!("max spread over 10 starts {worst:.3e} (limit {:.0e})", 2.0 * tol)))
    });
}

// ---------------------------------------------------------------- regret

/// Zeroes the distance series and rebuilds the bounds from it.
pub fn corrupt_delta(report: &mut RegretReport) {
    if let Some(eq) = report.equilibrium.as_mut() {
        eq.delta.iter_mut().for_each(|d| *d = 0.0);
        eq.recompute_bounds();
    }
}

struct CertifiedRun {
    name: String,
    log: RunLog,
    report: RegretReport,
}

fn certified_runs(fault: Fault) -> LabResult<Vec<CertifiedRun>> {
    let mut fixtures = quadratic_fixtures();
    fixtures.push(named("chain", chain_instance()?));
    let mut out = Vec::new();
    let mut rng = seeded_rng(501);
    for f in &fixtures {
        let p = f.problem.as_ref();
        let sol = solve_problem(p, 1e-12)?;
        for kind in AlgorithmKind::all() {
            for stochastic in [false, true] {
                let mode = if stochastic { stochastic_mode(p) } else { FeedbackMode::DeterministicGradient };
                let x1 = far_start(p, &sol.x_star, &mut rng);
                let log = run_with(p, kind, default_schedule(p, stochastic, None), x1, mode, 503, 1000)?;
                let mut report = compute_report(p, &log, Some(&sol), 1e-9)?;
                if fault == Fault::Delta {
                    corrupt_delta(&mut report);
                }
                let tag = if stochastic { "noisy" } else { "exact" };
                out.push(CertifiedRun {
                    name: format!("{}/{}/{tag}", f.name, kind.name()),
                    log,
                    report,
                });
            }
        }
    }
    Ok(out)
}

fn summarize(checks: &[(String, CertificateCheck)]) -> (bool, String) {
    let worst = checks
        .iter()
        .map(|(_, c)| c.worst_margin)
        .fold(f64::INFINITY, f64::min);
    let fails: Vec<String> = checks
        .iter()
        .filter(|(_, c)| !c.passed)
        .map(|(n, c)| format!("{n} at N={}", c.first_violation.unwrap_or(0)))
        .collect();
    (
        fails.is_empty(),
        format!("{} runs, min margin {worst:.3e}{}", checks.len(), fmt_fails(&fails)),
    )
}

fn regret_checks(s: &mut Suite, fault: Fault) {
    let runs = match certified_runs(fault) {
        Ok(r) => r,
        Err(e) => return s.check("runs", || Err(e)),
    };
    s.check("thm2_certificate", || {
        let checks = runs
            .iter()
            .map(|r| Ok((r.name.clone(), r.report.check_thm2()?)))
            .collect::<LabResult<Vec<_>>>()?;
        Ok(summarize(&checks))
    });
    s.check("cor1_certificate", || {
        let mut checks = Vec::new();
        for r in &runs {
            if let Some(c) = r.report.check_cor1()? {
                checks.push((r.name.clone(), c));
            }
        }
        Ok(summarize(&checks))
    });
    s.check("comparator_dominance", || {
        let mut rng = seeded_rng(511);
        let mut fixtures = quadratic_fixtures();
        fixtures.push(named("chain", chain_instance()?));
        let mut checks = Vec::new();
        for r in &runs {
            let problem_name = r.name.split('/').next().unwrap_or_default();
            let f = fixtures.iter().find(|f| f.name == problem_name).expect("known fixture");
            for _ in 0..10 {
                let x = f.problem.decision_set().sample(&mut rng);
                checks.push((r.name.clone(), r.report.check_comparator(f.problem.as_ref(), &r.log, &x)));
            }
        }
        Ok(summarize(&checks))
    });
    s.check("corrupted_delta_negative_control", || {
        let q = q1();
        let sol = solve_problem(&q, 1e-12)?;
        let log = run_with(
            &q,
            AlgorithmKind::OnlineGradientDescent,
            default_schedule(&q, false, None),
            vec![-1.0, -1.0],
            FeedbackMode::DeterministicGradient,
            0,
            200,
        )?;
        let mut report = compute_report(&q, &log, Some(&sol), 1e-9)?;
        let honest = report.check_thm2()?.passed;
        corrupt_delta(&mut report);
        let caught = !report.check_thm2()?.passed;
        Ok((honest && caught, format!("honest certificate passes: {honest}, corrupted one rejected: {caught}")))
    });
}

// ---------------------------------------------------------------- problems_synthetic

fn scaled_rotation(theta: f64, c: f64) -> Matrix {
    Matrix::from_rows(&[
        vec![c * theta.cos(), -c * theta.sin()],
        vec![c * theta.sin(), c * theta.cos()],
    ])
    .expect("square")
}

fn synthetic_checks(s: &mut Suite) {
    s.check("certified_constants", || {
        let mut rng = seeded_rng(601);
        let mut worst_exact: f64 = 0.0;
        let mut worst_general = f64::NEG_INFINITY;
        for i in 0..10 {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let c = rng.random_range(0.0..1.5);
            let q = QuadraticCol::new(scaled_rotation(theta, c), vec![0.1, -0.1], 0.5 + i as f64 * 0.2, DecisionSet::cube(2, 1.0)?)?;
            let k = q.constants();
            worst_exact = worst_exact.max((certify_alpha(&q, 10_000, &mut rng)? - k.alpha).abs());
            worst_exact = worst_exact.max((certify_beta(&q, 10_000, &mut rng)? - k.beta).abs());
            let norm = rng.random_range(0.1..1.2);
            let g = random_quadratic(&mut rng, 3, norm)?;
            let kg = g.constants();
            worst_exact = worst_exact.max((certify_alpha(&g, 10_000, &mut rng)? - kg.alpha).abs());
            worst_general = worst_general.max(certify_beta(&g, 10_000, &mut rng)? - kg.beta);
        }
        Ok((
            worst_exact <= 1e-6 && worst_general <= 1e-8,
            format!("max |certified - analytic| = {worst_exact:.3e} (limit 1e-6); general-A beta excess {worst_general:.3e}"),
        ))
    });
    s.check("closed_form_recovery", || {
        let mut rng = seeded_rng(611);
        let tol = 1e-10;
        let mut worst: f64 = 0.0;
        let mut count = 0;
        while count < 20 {
            let (dim, norm) = (rng.random_range(1..5), rng.random_range(0.0..0.95));
            let q = random_quadratic(&mut rng, dim, norm)?;
            let Some(closed) = q.closed_form_equilibrium() else { continue };
            let sol = solve_problem(&q, tol)?;
            worst = worst.max(vector::distance(&sol.x_star, &closed));
            count += 1;
        }
        Ok((worst <= 10.0 * tol, format!("max distance to closed form {worst:.3e} over {count} instances")))
    });
    s.check("monotonicity_tightness", || {
        let mut rng = seeded_rng(621);
        let mut worst: f64 = 0.0;
        for (c, alpha) in [(-0.5, 1.0), (0.0, 2.0), (0.3, 1.0), (0.8, 0.7)] {
            let q = QuadraticCol::new(Matrix::scaled_identity(2, c), vec![0.0, 0.1], alpha, DecisionSet::cube(2, 1.0)?)?;
            let m = monotonicity_certificate(&q, 1000, &mut rng)?;
            worst = worst.max((m - alpha * (1.0 - c)).abs());
        }
        Ok((worst <= 1e-12, format!("max |certificate - alpha (1 - c)| = {worst:.3e}")))
    });
    s.check("strong_monotonicity", || {
        let mut rng = seeded_rng(631);
        let mut worst = f64::INFINITY;
        for _ in 0..20 {
            let (dim, norm) = (rng.random_range(2..6), rng.random_range(0.0..1.3));
            let q = random_quadratic(&mut rng, dim, norm)?;
            let m = monotonicity_certificate(&q, 10_000, &mut rng)?;
            worst = worst.min(m - q.constants().mu());
        }
        Ok((worst >= -1e-8, format!("min certificate - (alpha - beta) = {worst:.3e} over 20 instances")))
    });
}

// ---------------------------------------------------------------- problems_il

fn il_checks(s: &mut Suite, fault: Fault) {
    let chain = match chain_instance() {
        Ok(c) => c,
        Err(e) => return s.check("fixtures", || Err(e.into())),
    };
    s.check("self_consistent_policy", || {
        let mut rng = seeded_rng(701);
        let sols = (0..5)
            .map(|_| solve_problem_from(&chain, &chain.decision_set().sample(&mut rng), 1e-10))
            .collect::<col_core::Result<Vec<_>>>()?;
        let mut spread: f64 = 0.0;
        for a in &sols {
            for b in &sols {
                spread = spread.max(vector::distance(&a.x_star, &b.x_star));
            }
        }
        let pi = &sols[0].x_star;
        let fixed = vector::distance(&per_round_minimizer(&chain, pi, 1e-12)?, pi);
        Ok((
            spread <= 1e-6 && fixed <= 1e-8,
            format!("start spread {spread:.3e} (limit 1e-6), fixed-point gap {fixed:.3e} (limit 1e-8)"),
        ))
    });
    s.check("linear_convergence", || {
        let c = chain.constants();
        let sol = reference_equilibrium(&chain)?;
        let floor = equilibrium_floor(&c, &sol);
        let mut rng = seeded_rng(711);
        let mut worst = f64::NEG_INFINITY;
        for eta in [c.mu() / (c.smoothness + c.beta).powi(2), 0.5 * c.step_ceiling(), 0.95 * c.step_ceiling()] {
            let x1 = far_start(&chain, &sol.x_star, &mut rng);
            worst = worst.max(contraction_violation(&chain, eta, x1, &sol.x_star, 500, floor)?);
        }
        Ok((worst <= 1e-9, format!("worst relative excess {worst:.3e} (limit 1e-9)")))
    });
    s.check("gradient_consistency", || {
        let offset = if fault == Fault::Gradient { 1e-3 } else { 0.0 };
        let mut rng = seeded_rng(721);
        let mut worst: f64 = 0.0;
        for f in il_fixtures()? {
            let p = OffsetGradient {
                inner: f.problem.as_ref(),
                offset,
            };
            worst = worst.max(gradient_check(&p, 20, 1e-5, &mut rng));
        }
        Ok((worst < 1e-5, format!("max relative error {worst:.3e} (limit 1e-5)")))
    });
    s.check("visitation_exactness", || {
        let mut rng = seeded_rng(731);
        let mut worst: f64 = 0.0;
        for f in [chain.clone(), lazy_ring_instance()?] {
            let pi = f.decision_set().sample(&mut rng);
            let exact = f.state_distribution(&pi);
            let (mean, se) = visitation_frequencies(f.mdp(), &pi, 100_000, &mut rng);
            for ((m, e), se) in mean.iter().zip(&exact).zip(&se) {
                let z = if *se > 0.0 { (m - e).abs() / se } else if (m - e).abs() <= 1e-12 { 0.0 } else { f64::INFINITY };
                worst = worst.max(z);
            }
        }
        Ok((worst <= 3.0, format!("max |MC - exact| / se = {worst:.3}")))
    });
    s.check("rollout_unbiasedness", || {
        let mut rng = seeded_rng(741);
        let pi = chain.decision_set().sample(&mut rng);
        let exact = chain.operator(&pi);
        let draws = 100_000;
        let mut sum = vec![0.0; exact.len()];
        let mut sum_sq = vec![0.0; exact.len()];
        for _ in 0..draws {
            let g = chain.rollout_feedback(&pi, &mut rng);
            for i in 0..g.len() {
                sum[i] += g[i];
                sum_sq[i] += g[i] * g[i];
            }
        }
        let n = draws as f64;
        let mut worst: f64 = 0.0;
        for i in 0..exact.len() {
            let m = sum[i] / n;
            let sd = ((sum_sq[i] / n - m * m).max(0.0) * n / (n - 1.0)).sqrt();
            worst = worst.max((m - exact[i]).abs() / (sd / n.sqrt()).max(1e-300));
        }
        Ok((worst <= 3.0, format!("max |mean - grad| / (sigma / sqrt 1e5) = {worst:.3}")))
    });
    s.check("strong_monotonicity", || {
        let mut rng = seeded_rng(751);
        let mut worst = f64::INFINITY;
        for f in il_fixtures()? {
            let m = monotonicity_certificate(f.problem.as_ref(), 10_000, &mut rng)?;
            worst = worst.min(m - f.problem.constants().mu());
        }
        Ok((worst >= -1e-8, format!("min certificate - (alpha - beta_hat) = {worst:.3e}")))
    });
    s.check("beta_without_policy_dependence", || {
        let mut rng = seeded_rng(761);
        let self_loop = self_loop_instance(4, 0.1)?.estimate_beta(1000, &mut rng);
        let one_step = IlProblem::new(lazy_chain_mdp(3, 1, 0.4)?, Policy::deterministic(2, &[0, 1, 0])?, 0.1)?
            .estimate_beta(1000, &mut rng);
        Ok((
            self_loop == 0.0 && one_step == 0.0,
            format!("self-loop beta_hat {self_loop}, horizon-1 beta_hat {one_step}"),
        ))
    });
}

// ---------------------------------------------------------------- harness

const HARNESS_CONFIG: &str = r#"
[problem]
kind = "quadratic"
a_scale = 0.5
b = [0.2, 0.2]
set = { kind = "cube", dimension = 2 }

[algorithm]
name = "ogd"

[oracle]
mode = "stochastic"
noise = "gaussian"
sigma = 0.2

[run]
rounds = 120
seeds = [3, 5]
x1 = [-1.0, 1.0]
"#;

fn harness_checks(s: &mut Suite) {
    s.check("csv_round_trip", || {
        let dir = tempfile::tempdir().map_err(|e| LabError::io("<tempdir>", e))?;
        let config = ExperimentConfig::from_text(HARNESS_CONFIG, Path::new("."), &[])?;
        let result = run_experiment(&config, dir.path())?;
        let mut bad = Vec::new();
        for o in &result.outcomes {
            let table = RoundsTable::read(&rounds_file(dir.path(), o.seed))?;
            if !table.matches(&o.report) {
                bad.push(o.seed.to_string());
            }
        }
        Ok((bad.is_empty(), format!("{} per-round files reparsed bitwise{}", result.outcomes.len(), fmt_fails(&bad))))
    });
    s.check("config_determinism", || {
        let config = ExperimentConfig::from_text(HARNESS_CONFIG, Path::new("."), &[])?;
        let a = tempfile::tempdir().map_err(|e| LabError::io("<tempdir>", e))?;
        let b = tempfile::tempdir().map_err(|e| LabError::io("<tempdir>", e))?;
        let ra = run_experiment(&config, a.path())?;
        run_experiment(&config, b.path())?;
        let mut differing = Vec::new();
        for file in &ra.files {
            let name = file.file_name().expect("file name");
            let x = std::fs::read(file).map_err(|e| LabError::io(file, e))?;
            let other = b.path().join(name);
            let y = std::fs::read(&other).map_err(|e| LabError::io(&other, e))?;
            if x != y {
                differing.push(name.to_string_lossy().into_owned());
            }
        }
        Ok((differing.is_empty(), format!("{} files byte-identical across reruns{}", ra.files.len(), fmt_fails(&differing))))
    });
    s.check("fault_injection_detected", || {
        let mut delta = Suite::new(Module::Regret);
        regret_checks(&mut delta, Fault::Delta);
        let mut grad = Suite::new(Module::ProblemsIl);
        il_checks(&mut grad, Fault::Gradient);
        let delta_caught = delta.out.iter().any(|o| !o.passed);
        let grad_caught = grad.out.iter().any(|o| !o.passed);
        Ok((
            delta_caught && grad_caught,
            format!("delta fault caught: {delta_caught}, gradient fault caught: {grad_caught}"),
        ))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_parsing() {
        assert_eq!(parse_scope("all").unwrap().len(), 8);
        assert_eq!(parse_scope("problems_il").unwrap(), vec![Module::ProblemsIl]);
        assert!(parse_scope("physics").is_err());
        assert_eq!("delta".parse::<Fault>().unwrap(), Fault::Delta);
    }

    #[test]
    fn geometry_suite_passes() {
        let out = verify(&[Module::Geometry], Fault::None);
        assert!(all_passed(&out), "{out:#?}");
    }

    #[test]
    fn delta_fault_fails_regret_suite() {
        let out = verify(&[Module::Regret], Fault::Delta);
        let thm2 = out.iter().find(|o| o.name == "thm2_certificate").unwrap();
        assert!(!thm2.passed);
    }
}
