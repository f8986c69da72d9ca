//! The continuous online learning protocol.
//!
//! In round `n` the learner plays `x_n`, the opponent answers with the loss
//! `l_n = f_{x_n}(.)` drawn from a fixed bifunction `f`, and the learner
//! receives first-order feedback about `l_n` at `x_n`. Regret is always
//! measured against the true `l_n`, never against noisy feedback.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::algorithms::AlgorithmState;
use crate::error::{ColError, Result};
use crate::geometry::{DecisionSet, MEMBERSHIP_TOL};
use crate::vector;

/// Generator used everywhere a seed must reproduce a run bit for bit.
pub type LabRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> LabRng {
    LabRng::seed_from_u64(seed)
}

/// Where a regularity constant came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    /// Certified lower/upper bound derived from problem data.
    Certified,
    /// Sampling estimate (possibly inflated by a safety factor).
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    /// Strong convexity modulus of `f_x(.)`.
    pub alpha: f64,
    /// Lipschitz modulus of `x -> grad f_x(x')`.
    pub beta: f64,
    /// Lipschitz modulus of `grad f_x(.)` for a fixed query.
    pub smoothness: f64,
    /// Strict bound on `||grad f_x(x)||` over the set.
    pub grad_bound: f64,
    pub beta_provenance: Provenance,
}

impl Constants {
    /// Strong monotonicity modulus `alpha - beta` of `x -> grad f_x(x)`.
    pub fn mu(&self) -> f64 {
        self.alpha - self.beta
    }

    pub fn strongly_monotone(&self) -> bool {
        self.mu() > 0.0
    }

    /// Ceiling `2 mu / (L + beta)^2` for a linearly convergent constant step.
    pub fn step_ceiling(&self) -> f64 {
        2.0 * self.mu() / (self.smoothness + self.beta).powi(2)
    }

    /// Per-round contraction factor `1 + (L + beta)^2 eta^2 - 2 mu eta` of
    /// `||x_n - x*||^2` under projected gradient steps.
    pub fn contraction_factor(&self, eta: f64) -> f64 {
        1.0 + (self.smoothness + self.beta).powi(2) * eta * eta - 2.0 * self.mu() * eta
    }
}

/// A bifunction `f_x(x')` over a decision set. `x` is the query argument and
/// `x'` the decision argument; gradients are taken with respect to `x'`.
pub trait ColProblem: Send + Sync {
    fn decision_set(&self) -> &DecisionSet;

    fn constants(&self) -> Constants;

    fn eval(&self, query: &[f64], decision: &[f64]) -> f64;

    fn grad(&self, query: &[f64], decision: &[f64]) -> Vec<f64>;

    /// `F(x) = grad f_x(x)`, the operator of the associated variational inequality.
    fn operator(&self, x: &[f64]) -> Vec<f64> {
        self.grad(x, x)
    }

    fn dimension(&self) -> usize {
        self.decision_set().dimension()
    }

    /// Exact `argmin_{x in X} f_query(x)` when available in closed form.
    fn round_minimizer(&self, _query: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Exact `argmin_{x in X} sum_k f_{x_k}(x)` from the running sum of the
    /// `count` queries seen so far, when the family admits it.
    fn leader(&self, _query_sum: &[f64], _count: usize) -> Option<Vec<f64>> {
        None
    }

    /// Unbiased sampled gradient of `f_x(.)` at `x` (for instance from a simulated episode).
    fn sample_gradient(&self, _x: &[f64], _rng: &mut LabRng) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// Isotropic Gaussian with `E||xi||^2 = sigma^2`.
    Gaussian { sigma: f64 },
    /// Problem-supplied sampled gradient (episode rollouts for imitation learning).
    Rollout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeedbackMode {
    DeterministicGradient,
    StochasticGradient(NoiseModel),
    /// The learner may query the whole loss; the gradient channel is exact.
    FullInformation,
}

/// First-order feedback channel with its own seeded generator.
#[derive(Debug, Clone)]
pub struct FeedbackOracle {
    mode: FeedbackMode,
    seed: u64,
    rng: LabRng,
    noise_second_moment: Option<f64>,
}

impl FeedbackOracle {
    pub fn new(mode: FeedbackMode, seed: u64) -> Self {
        let noise_second_moment = match mode {
            FeedbackMode::StochasticGradient(NoiseModel::Gaussian { sigma }) => Some(sigma * sigma),
            FeedbackMode::StochasticGradient(NoiseModel::Rollout) => None,
            _ => Some(0.0),
        };
        Self {
            mode,
            seed,
            rng: seeded_rng(seed),
            noise_second_moment,
        }
    }

    pub fn deterministic() -> Self {
        Self::new(FeedbackMode::DeterministicGradient, 0)
    }

    pub fn mode(&self) -> FeedbackMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self.mode, FeedbackMode::StochasticGradient(_))
    }

    /// Recorded `sigma^2` bound on `E||xi_n||^2`, if known.
    pub fn noise_second_moment(&self) -> Option<f64> {
        self.noise_second_moment
    }

    pub fn record_noise_second_moment(&mut self, value: f64) {
        self.noise_second_moment = Some(value);
    }

    /// Feedback about `l = f_x(.)` at `x`.
    pub fn feedback(&mut self, problem: &dyn ColProblem, x: &[f64]) -> Result<Vec<f64>> {
        let g = match self.mode {
            FeedbackMode::DeterministicGradient | FeedbackMode::FullInformation => {
                problem.operator(x)
            }
            FeedbackMode::StochasticGradient(NoiseModel::Gaussian { sigma }) => {
                let mut g = problem.operator(x);
                let per_coord = sigma / (g.len() as f64).sqrt();
                for v in g.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    *v += per_coord * z;
                }
                g
            }
            FeedbackMode::StochasticGradient(NoiseModel::Rollout) => problem
                .sample_gradient(x, &mut self.rng)
                .ok_or_else(|| ColError::Unsupported {
                    algorithm: "rollout feedback",
                    reason: "problem cannot simulate sampled gradients".into(),
                })?,
        };
        if !vector::all_finite(&g) {
            return Err(ColError::Feedback(format!("gradient {g:?}")));
        }
        Ok(g)
    }
}

/// Monte Carlo estimate of `E||g - grad l(x)||^2` for a stochastic oracle at `x`.
pub fn estimate_noise_second_moment(
    problem: &dyn ColProblem,
    oracle: &mut FeedbackOracle,
    x: &[f64],
    draws: usize,
) -> Result<f64> {
    let exact = problem.operator(x);
    let mut total = 0.0;
    for _ in 0..draws.max(1) {
        let g = oracle.feedback(problem, x)?;
        total += vector::distance(&g, &exact).powi(2);
    }
    Ok(total / draws.max(1) as f64)
}

/// Plays one round at `x_n`: returns `(l_n(x_n), feedback)`.
pub fn play_round(
    problem: &dyn ColProblem,
    oracle: &mut FeedbackOracle,
    x_n: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let violation = problem.decision_set().violation(x_n)?;
    if violation > MEMBERSHIP_TOL {
        return Err(ColError::Domain { violation });
    }
    let loss = problem.eval(x_n, x_n);
    let feedback = oracle.feedback(problem, x_n)?;
    Ok((loss, feedback))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub rounds: usize,
    pub decisions: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
    pub feedback: Vec<Vec<f64>>,
    pub seed: u64,
    pub wall_clock: Vec<f64>,
}

impl RunLog {
    /// Equality of every recorded series except wall-clock timing, compared bitwise.
    pub fn same_trajectory(&self, other: &RunLog) -> bool {
        fn bits(v: &[f64]) -> Vec<u64> {
            v.iter().map(|x| x.to_bits()).collect()
        }
        self.rounds == other.rounds
            && self.seed == other.seed
            && bits(&self.losses) == bits(&other.losses)
            && self.decisions.len() == other.decisions.len()
            && self
                .decisions
                .iter()
                .zip(&other.decisions)
                .all(|(a, b)| bits(a) == bits(b))
            && self.feedback.len() == other.feedback.len()
            && self
                .feedback
                .iter()
                .zip(&other.feedback)
                .all(|(a, b)| bits(a) == bits(b))
    }
}

/// Drives `state` against `problem` for `rounds` rounds starting from the
/// state's current decision.
pub fn run(
    problem: &dyn ColProblem,
    oracle: &mut FeedbackOracle,
    state: &mut AlgorithmState,
    rounds: usize,
) -> Result<RunLog> {
    if rounds == 0 {
        return Err(ColError::Config("a run needs at least one round".into()));
    }
    let set = problem.decision_set();
    if !set.contains(state.decision()) {
        return Err(ColError::Domain {
            violation: set.violation(state.decision())?,
        });
    }
    let mut log = RunLog {
        rounds,
        decisions: Vec::with_capacity(rounds),
        losses: Vec::with_capacity(rounds),
        feedback: Vec::with_capacity(rounds),
        seed: oracle.seed(),
        wall_clock: Vec::with_capacity(rounds),
    };
    for n in 1..=rounds {
        let start = Instant::now();
        let x_n = state.decision().to_vec();
        let (loss, g) = play_round(problem, oracle, &x_n)?;
        if n < rounds {
            state.advance(problem, oracle, &g)?;
            let violation = set.violation(state.decision())?;
            if violation > MEMBERSHIP_TOL {
                return Err(ColError::Internal(format!(
                    "{} left the decision set at round {n} (violation {violation:e})",
                    state.name()
                )));
            }
        }
        log.decisions.push(x_n);
        log.losses.push(loss);
        log.feedback.push(g);
        log.wall_clock.push(start.elapsed().as_secs_f64());
    }
    Ok(log)
}

const DEGENERATE_GAP: f64 = 1e-12;
const MAX_RESAMPLES: usize = 1000;

fn distinct_pair(set: &DecisionSet, rng: &mut LabRng) -> Result<(Vec<f64>, Vec<f64>)> {
    for _ in 0..MAX_RESAMPLES {
        let a = set.sample(rng);
        let b = set.sample(rng);
        if vector::distance(&a, &b) >= DEGENERATE_GAP {
            return Ok((a, b));
        }
    }
    Err(ColError::Numeric(
        "decision set too small to draw distinct sample pairs".into(),
    ))
}

/// Smallest observed curvature `<g1 - g2, x1 - x2> / ||x1 - x2||^2` of
/// `f_x(.)` over sampled triples `(x, x1, x2)`.
pub fn certify_alpha(problem: &dyn ColProblem, num_samples: usize, rng: &mut LabRng) -> Result<f64> {
    let set = problem.decision_set();
    let mut worst = f64::INFINITY;
    for _ in 0..num_samples.max(1) {
        let query = set.sample(rng);
        let (a, b) = distinct_pair(set, rng)?;
        let diff = vector::sub(&a, &b);
        let gdiff = vector::sub(&problem.grad(&query, &a), &problem.grad(&query, &b));
        worst = worst.min(vector::dot(&gdiff, &diff) / vector::dot(&diff, &diff));
    }
    Ok(worst)
}

/// Largest observed ratio `||grad f_{x1}(x') - grad f_{x2}(x')|| / ||x1 - x2||`.
pub fn certify_beta(problem: &dyn ColProblem, num_samples: usize, rng: &mut LabRng) -> Result<f64> {
    let set = problem.decision_set();
    let mut worst: f64 = 0.0;
    for _ in 0..num_samples.max(1) {
        let decision = set.sample(rng);
        let (a, b) = distinct_pair(set, rng)?;
        let gdiff = vector::sub(&problem.grad(&a, &decision), &problem.grad(&b, &decision));
        worst = worst.max(vector::norm(&gdiff) / vector::distance(&a, &b));
    }
    Ok(worst)
}

/// Worst relative error between `grad` and central differences of `eval`
/// over `pairs` random `(query, decision)` pairs.
pub fn gradient_check(
    problem: &dyn ColProblem,
    pairs: usize,
    step: f64,
    rng: &mut LabRng,
) -> f64 {
    let set = problem.decision_set();
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let query = set.sample(rng);
        let decision = set.sample(rng);
        let analytic = problem.grad(&query, &decision);
        let mut numeric = vec![0.0; decision.len()];
        let mut probe = decision.clone();
        for i in 0..decision.len() {
            probe[i] = decision[i] + step;
            let up = problem.eval(&query, &probe);
            probe[i] = decision[i] - step;
            let down = problem.eval(&query, &probe);
            probe[i] = decision[i];
            numeric[i] = (up - down) / (2.0 * step);
        }
        let scale = vector::norm(&analytic).max(vector::norm(&numeric)).max(1e-8);
        worst = worst.max(vector::distance(&analytic, &numeric) / scale);
    }
    worst
}
