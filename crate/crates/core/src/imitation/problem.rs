use crate::error::{ColError, Result};
use crate::geometry::{project_floored_simplex, DecisionSet};
use crate::protocol::{seeded_rng, ColProblem, Constants, LabRng, Provenance};
use crate::vector;

use super::mdp::TabularMdp;

/// Row-stochastic policy table `pi[s, a]`, flattened state-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    num_states: usize,
    num_actions: usize,
    table: Vec<f64>,
}

impl Policy {
    pub fn new(num_states: usize, num_actions: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != num_states * num_actions {
            return Err(ColError::DimensionMismatch {
                expected: num_states * num_actions,
                got: table.len(),
            });
        }
        for (s, row) in table.chunks(num_actions).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (total - 1.0).abs() > 1e-12 {
                return Err(ColError::InvalidProblem(format!("policy row {s} is not a distribution")));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            table,
        })
    }

    /// Policy that always plays `actions[s]` in state `s`.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut table = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(ColError::InvalidProblem(format!("action {a} out of range")));
            }
            table[s * num_actions + a] = 1.0;
        }
        Self::new(actions.len(), num_actions, table)
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            table: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.table
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.table[s * self.num_actions..(s + 1) * self.num_actions]
    }
}

/// Inflation applied to the sampled Lipschitz estimate of `pi -> d^pi`.
pub const BETA_SAFETY_FACTOR: f64 = 1.5;
pub const DEFAULT_BETA_PAIRS: usize = 10_000;
const DEFAULT_BETA_SEED: u64 = 0xbe7a;

/// Online imitation learning as a bifunction:
/// `f_q(pi) = sum_s d^q(s) * 0.5 ||pi(.|s) - pi*(.|s)||^2`.
///
/// The loss in the decision argument is a weighted identity quadratic, so
/// every per-round minimizer (and every follow-the-leader iterate) is the
/// per-state projection of the expert onto the floored policy class.
#[derive(Debug, Clone)]
pub struct IlProblem {
    mdp: TabularMdp,
    expert: Policy,
    floor: f64,
    set: DecisionSet,
    constants: Constants,
    expert_projection: Vec<f64>,
    /// Per-state `max_{pi in class} ||pi(.|s) - pi*(.|s)||^2`.
    worst_deviation: Vec<f64>,
}

impl IlProblem {
    /// Builds the problem and calibrates `beta` with the default sampling budget.
    pub fn new(mdp: TabularMdp, expert: Policy, floor: f64) -> Result<Self> {
        let mut problem = Self::uncalibrated(mdp, expert, floor)?;
        let mut rng = seeded_rng(DEFAULT_BETA_SEED);
        problem.calibrate_beta(DEFAULT_BETA_PAIRS, &mut rng);
        Ok(problem)
    }

    /// Builds the problem with `beta = 0`; call [`IlProblem::calibrate_beta`] before relying on it.
    pub fn uncalibrated(mdp: TabularMdp, expert: Policy, floor: f64) -> Result<Self> {
        if expert.num_states() != mdp.num_states() || expert.num_actions() != mdp.num_actions() {
            return Err(ColError::InvalidProblem(format!(
                "expert is {}x{} but the MDP is {}x{}",
                expert.num_states(),
                expert.num_actions(),
                mdp.num_states(),
                mdp.num_actions()
            )));
        }
        if mdp.initial().iter().any(|p| *p <= 0.0) {
            return Err(ColError::InvalidProblem(
                "initial distribution must be strictly positive for a strongly convex loss".into(),
            ));
        }
        let set = DecisionSet::simplices(mdp.num_states(), mdp.num_actions(), floor)?;
        let a = mdp.num_actions();
        let expert_projection: Vec<f64> = expert
            .as_slice()
            .chunks(a)
            .flat_map(|row| project_floored_simplex(row, floor))
            .collect();
        let top = 1.0 - (a as f64 - 1.0) * floor;
        let worst_deviation: Vec<f64> = expert
            .as_slice()
            .chunks(a)
            .map(|row| {
                (0..a)
                    .map(|v| {
                        row.iter()
                            .enumerate()
                            .map(|(j, e)| {
                                let p = if j == v { top } else { floor };
                                (p - e) * (p - e)
                            })
                            .sum::<f64>()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let alpha = mdp.min_visitation_bound();
        let smoothness = mdp.max_visitation_bound();
        let max_dev = worst_deviation.iter().cloned().fold(0.0, f64::max);
        let grad_bound = ((max_dev * smoothness).sqrt() * (1.0 + 1e-9)).max(1e-12);
        Ok(Self {
            mdp,
            expert,
            floor,
            set,
            constants: Constants {
                alpha,
                beta: 0.0,
                smoothness,
                grad_bound,
                beta_provenance: Provenance::Estimated,
            },
            expert_projection,
            worst_deviation,
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn expert(&self) -> &Policy {
        &self.expert
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Per-state projection of the expert onto the policy class.
    pub fn expert_projection(&self) -> &[f64] {
        &self.expert_projection
    }

    pub fn state_distribution(&self, policy: &[f64]) -> Vec<f64> {
        self.mdp.state_distribution(policy)
    }

    /// Loss and gradient of `f_query` at `decision`.
    pub fn il_loss(&self, query: &[f64], decision: &[f64]) -> (f64, Vec<f64>) {
        let d = self.state_distribution(query);
        let a = self.mdp.num_actions();
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(decision.len());
        for (s, (row, expert_row)) in decision.chunks(a).zip(self.expert.as_slice().chunks(a)).enumerate() {
            let diff = vector::sub(row, expert_row);
            loss += d[s] * 0.5 * vector::dot(&diff, &diff);
            grad.extend(diff.iter().map(|v| d[s] * v));
        }
        (loss, grad)
    }

    /// Gradient of the empirical risk of one simulated episode under `policy`.
    pub fn rollout_feedback(&self, policy: &[f64], rng: &mut LabRng) -> Vec<f64> {
        let states = self.mdp.sample_episode(policy, rng);
        self.episode_gradient(policy, &states)
    }

    /// `(1/T) sum_t grad c(s_t, policy)` for a visited state sequence.
    pub fn episode_gradient(&self, policy: &[f64], states: &[usize]) -> Vec<f64> {
        let a = self.mdp.num_actions();
        let weight = 1.0 / states.len().max(1) as f64;
        let mut g = vec![0.0; policy.len()];
        for &s in states {
            for j in s * a..(s + 1) * a {
                g[j] += weight * (policy[j] - self.expert.as_slice()[j]);
            }
        }
        g
    }

    /// Largest sampled `||grad f_{pi1}(pi) - grad f_{pi2}(pi)|| / ||pi1 - pi2||`,
    /// maximized exactly over the decision `pi` for each sampled pair.
    /// Half the pairs are independent draws, half are local perturbations.
    pub fn estimate_beta(&self, num_pairs: usize, rng: &mut LabRng) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..num_pairs.max(1) {
            let p1 = self.set.sample(rng);
            let p2 = if i % 2 == 0 {
                self.set.sample(rng)
            } else {
                let noise: Vec<f64> = self.set.sample(rng).iter().zip(&self.set.center()).map(|(x, c)| 1e-3 * (x - c)).collect();
                let step = self.set.tangent_component(&noise);
                match self.set.project_point(&vector::descend(&p1, -1.0, &step)) {
                    Ok(p) => p,
                    Err(_) => continue,
                }
            };
            let gap = vector::distance(&p1, &p2);
            if gap < 1e-12 {
                continue;
            }
            let d1 = self.state_distribution(&p1);
            let d2 = self.state_distribution(&p2);
            let numerator: f64 = d1
                .iter()
                .zip(&d2)
                .zip(&self.worst_deviation)
                .map(|((a, b), w)| (a - b) * (a - b) * w)
                .sum();
            worst = worst.max(numerator.sqrt() / gap);
        }
        worst
    }

    /// Sets the working `beta` to the safety-inflated sampled estimate and returns it.
    pub fn calibrate_beta(&mut self, num_pairs: usize, rng: &mut LabRng) -> f64 {
        let beta = BETA_SAFETY_FACTOR * self.estimate_beta(num_pairs, rng);
        self.constants.beta = beta;
        self.constants.beta_provenance = Provenance::Estimated;
        beta
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.constants.beta = beta;
    }
}

impl ColProblem for IlProblem {
    fn decision_set(&self) -> &DecisionSet {
        &self.set
    }

    fn constants(&self) -> Constants {
        self.constants
    }

    fn eval(&self, query: &[f64], decision: &[f64]) -> f64 {
        self.il_loss(query, decision).0
    }

    fn grad(&self, query: &[f64], decision: &[f64]) -> Vec<f64> {
        self.il_loss(query, decision).1
    }

    fn round_minimizer(&self, _query: &[f64]) -> Option<Vec<f64>> {
        // every state has positive weight under any query policy
        Some(self.expert_projection.clone())
    }

    fn leader(&self, _query_sum: &[f64], count: usize) -> Option<Vec<f64>> {
        (count > 0).then(|| self.expert_projection.clone())
    }

    fn sample_gradient(&self, x: &[f64], rng: &mut LabRng) -> Option<Vec<f64>> {
        Some(self.rollout_feedback(x, rng))
    }
}
