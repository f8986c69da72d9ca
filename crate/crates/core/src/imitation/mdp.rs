use rand::Rng;

use crate::error::{ColError, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Finite episodic MDP. Transition rows are stored as `P[s, a, .]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    transitions: Vec<f64>,
    initial: Vec<f64>,
    /// States whose transition row is the same for every action.
    action_free: Vec<bool>,
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(ColError::InvalidMdp(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(ColError::InvalidMdp(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl TabularMdp {
    /// `transitions` is indexed `[s][a][s']`.
    pub fn new(horizon: usize, initial: Vec<f64>, transitions: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let num_states = initial.len();
        if num_states == 0 {
            return Err(ColError::InvalidMdp("no states".into()));
        }
        if horizon == 0 {
            return Err(ColError::InvalidMdp("horizon must be at least 1".into()));
        }
        check_distribution(&initial, "initial distribution")?;
        if transitions.len() != num_states {
            return Err(ColError::InvalidMdp(format!(
                "{} transition blocks for {num_states} states",
                transitions.len()
            )));
        }
        let num_actions = transitions[0].len();
        if num_actions == 0 {
            return Err(ColError::InvalidMdp("no actions".into()));
        }
        let mut flat = Vec::with_capacity(num_states * num_actions * num_states);
        for (s, per_action) in transitions.iter().enumerate() {
            if per_action.len() != num_actions {
                return Err(ColError::InvalidMdp(format!("state {s} has {} actions", per_action.len())));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != num_states {
                    return Err(ColError::InvalidMdp(format!(
                        "row P[{s}, {a}, .] has {} entries",
                        row.len()
                    )));
                }
                check_distribution(row, &format!("row P[{s}, {a}, .]"))?;
                flat.extend_from_slice(row);
            }
        }
        let action_free = transitions
            .iter()
            .map(|rows| rows.iter().all(|r| r == &rows[0]))
            .collect();
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            transitions: flat,
            initial,
            action_free,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    /// `d_{t+1}(s') = sum_{s, a} d_t(s) pi(a|s) P(s'|s, a)`, starting from the initial distribution.
    pub fn step_distribution(&self, current: &[f64], policy: &[f64]) -> Vec<f64> {
        let mut next = vec![0.0; self.num_states];
        for (s, &mass) in current.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            if self.action_free[s] {
                // the policy row sums to one, so it drops out exactly
                for (n, p) in next.iter_mut().zip(self.transition(s, 0)) {
                    *n += mass * p;
                }
                continue;
            }
            for a in 0..self.num_actions {
                let w = mass * policy[s * self.num_actions + a];
                if w == 0.0 {
                    continue;
                }
                for (n, p) in next.iter_mut().zip(self.transition(s, a)) {
                    *n += w * p;
                }
            }
        }
        next
    }

    /// Average state distribution `d^pi = (1/T) sum_t d_t^pi` over the horizon.
    pub fn state_distribution(&self, policy: &[f64]) -> Vec<f64> {
        let mut current = self.initial.clone();
        let mut total = current.clone();
        for _ in 1..self.horizon {
            current = self.step_distribution(&current, policy);
            for (t, c) in total.iter_mut().zip(&current) {
                *t += c;
            }
        }
        let scale = 1.0 / self.horizon as f64;
        total.iter_mut().for_each(|v| *v *= scale);
        total
    }

    /// Lower bound on `min_s d^pi(s)` over all policies.
    pub fn min_visitation_bound(&self) -> f64 {
        (0..self.num_states)
            .map(|target| {
                let inflow = self.min_inflow(target);
                (self.initial[target] + (self.horizon - 1) as f64 * inflow) / self.horizon as f64
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Upper bound on `max_s d^pi(s)` over all policies.
    pub fn max_visitation_bound(&self) -> f64 {
        (0..self.num_states)
            .map(|target| {
                let inflow = self.max_inflow(target);
                (self.initial[target] + (self.horizon - 1) as f64 * inflow) / self.horizon as f64
            })
            .fold(0.0, f64::max)
            .min(1.0)
    }

    fn inflows(&self, target: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_states).flat_map(move |s| {
            (0..self.num_actions).map(move |a| self.transition(s, a)[target])
        })
    }

    fn min_inflow(&self, target: usize) -> f64 {
        self.inflows(target).fold(f64::INFINITY, f64::min)
    }

    fn max_inflow(&self, target: usize) -> f64 {
        self.inflows(target).fold(0.0, f64::max)
    }

    /// States `s_1..s_T` of one episode under `policy`.
    pub fn sample_episode<R: Rng + ?Sized>(&self, policy: &[f64], rng: &mut R) -> Vec<usize> {
        let mut states = Vec::with_capacity(self.horizon);
        let mut s = sample_index(&self.initial, rng);
        states.push(s);
        for _ in 1..self.horizon {
            let a = sample_index(&policy[s * self.num_actions..(s + 1) * self.num_actions], rng);
            s = sample_index(self.transition(s, a), rng);
            states.push(s);
        }
        states
    }
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last_positive = i;
        }
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the accumulated mass
    last_positive
}

/// Monte Carlo visitation frequencies: per-state mean of `(1/T) #visits` and
/// its standard error over `episodes` episodes.
pub fn visitation_frequencies<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &[f64],
    episodes: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let n_s = mdp.num_states();
    let mut sum = vec![0.0; n_s];
    let mut sum_sq = vec![0.0; n_s];
    let inv_t = 1.0 / mdp.horizon() as f64;
    let mut counts = vec![0.0; n_s];
    for _ in 0..episodes {
        counts.iter_mut().for_each(|c| *c = 0.0);
        for s in mdp.sample_episode(policy, rng) {
            counts[s] += inv_t;
        }
        for s in 0..n_s {
            sum[s] += counts[s];
            sum_sq[s] += counts[s] * counts[s];
        }
    }
    let n = episodes as f64;
    let mean: Vec<f64> = sum.iter().map(|v| v / n).collect();
    let std_err = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            let var = (sq / n - m * m).max(0.0) * n / (n - 1.0).max(1.0);
            (var / n).sqrt()
        })
        .collect();
    (mean, std_err)
}
