//! Online imitation learning on tabular episodic MDPs.
//!
//! The learner's policy `pi_n` induces the state distribution `d^{pi_n}`;
//! the round loss compares candidate policies to the expert on that
//! distribution. Because `d^pi` moves continuously with `pi`, the rounds are
//! linked through a bifunction rather than chosen adversarially.

mod format;
mod mdp;
mod problem;

pub use format::MdpSpec;
pub use mdp::{visitation_frequencies, TabularMdp};
pub use problem::{IlProblem, Policy, BETA_SAFETY_FACTOR, DEFAULT_BETA_PAIRS};

use crate::error::Result;

/// Two states, two actions, every action keeps the current state. `d^pi`
/// does not depend on `pi`.
pub fn self_loop_mdp(horizon: usize) -> Result<TabularMdp> {
    TabularMdp::new(
        horizon,
        vec![0.5, 0.5],
        vec![
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        ],
    )
}

/// Two states; action 0 stays, action 1 swaps.
pub fn swap_chain_mdp(initial: Vec<f64>, horizon: usize) -> Result<TabularMdp> {
    TabularMdp::new(
        horizon,
        initial,
        vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        ],
    )
}

/// Ring of `states` states with uniform start. Action 0 stays and action 1
/// advances to the next state; with probability `mixing` the next state is
/// instead drawn uniformly.
pub fn lazy_chain_mdp(states: usize, horizon: usize, mixing: f64) -> Result<TabularMdp> {
    let uniform = mixing / states as f64;
    let transitions = (0..states)
        .map(|s| {
            (0..2)
                .map(|a| {
                    let target = if a == 0 { s } else { (s + 1) % states };
                    (0..states)
                        .map(|t| uniform + if t == target { 1.0 - mixing } else { 0.0 })
                        .collect()
                })
                .collect()
        })
        .collect();
    TabularMdp::new(horizon, vec![1.0 / states as f64; states], transitions)
}

/// The reference imitation instance: a 3-state lazy chain with horizon 3 and
/// mixing 0.8, an expert that always stays, and policy floor 0.1 (so the
/// expert lies outside the policy class). Its certified `alpha` exceeds the
/// estimated `beta`.
pub fn chain_instance() -> Result<IlProblem> {
    let mdp = lazy_chain_mdp(3, 3, 0.8)?;
    let expert = Policy::deterministic(2, &[0, 0, 0])?;
    IlProblem::new(mdp, expert, 0.1)
}

/// Self-loop MDP with a deterministic expert (action 0) and floor `floor`.
pub fn self_loop_instance(horizon: usize, floor: f64) -> Result<IlProblem> {
    IlProblem::new(self_loop_mdp(horizon)?, Policy::deterministic(2, &[0, 0])?, floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_problem;
    use crate::protocol::{seeded_rng, ColProblem};
    use crate::regret::per_round_minimizer;
    use crate::vector;
    use approx::assert_abs_diff_eq;

    #[test]
    fn horizon_one_gives_initial_distribution() {
        let mdp = lazy_chain_mdp(3, 1, 0.3).unwrap();
        for table in [vec![0.5; 6], vec![1.0, 0.0, 0.0, 1.0, 0.2, 0.8]] {
            assert_eq!(mdp.state_distribution(&table), mdp.initial());
        }
    }

    #[test]
    fn self_loop_distribution_is_policy_independent() {
        let mdp = self_loop_mdp(5).unwrap();
        assert_eq!(mdp.state_distribution(&[0.9, 0.1, 0.3, 0.7]), vec![0.5, 0.5]);
        assert_eq!(mdp.state_distribution(&[0.2, 0.8, 1.0, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn swap_chain_two_steps() {
        let mdp = swap_chain_mdp(vec![1.0, 0.0], 2).unwrap();
        let always_swap = Policy::deterministic(2, &[1, 1]).unwrap();
        assert_eq!(mdp.state_distribution(always_swap.as_slice()), vec![0.5, 0.5]);
    }

    #[test]
    fn distribution_sums_to_one() {
        let ilp = chain_instance().unwrap();
        let mut rng = seeded_rng(1);
        for _ in 0..100 {
            let pi = ilp.decision_set().sample(&mut rng);
            let d = ilp.state_distribution(&pi);
            assert_abs_diff_eq!(d.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn expert_in_class_has_zero_loss() {
        let mdp = lazy_chain_mdp(3, 3, 0.5).unwrap();
        let expert = Policy::new(3, 2, vec![0.3, 0.7, 0.5, 0.5, 0.9, 0.1]).unwrap();
        let ilp = IlProblem::new(mdp, expert.clone(), 0.0).unwrap();
        let (loss, grad) = ilp.il_loss(&[0.5; 6], expert.as_slice());
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
        assert_eq!(per_round_minimizer(&ilp, &[0.5; 6], 1e-9).unwrap(), expert.as_slice());
    }

    #[test]
    fn self_loop_loss_by_hand() {
        let ilp = self_loop_instance(4, 0.0).unwrap();
        let (loss, _) = ilp.il_loss(&[0.5; 4], &[0.5; 4]);
        // two states, weight 0.5 each, per-state 0.5 * ||(.5,.5) - (1,0)||^2 = 0.25
        assert_abs_diff_eq!(loss, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn floored_class_minimizer() {
        let ilp = self_loop_instance(3, 0.1).unwrap();
        let m = per_round_minimizer(&ilp, &[0.5; 4], 1e-9).unwrap();
        for (got, want) in m.iter().zip([0.9, 0.1, 0.9, 0.1]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn beta_is_zero_without_policy_dependence() {
        let mut rng = seeded_rng(2);
        assert_eq!(self_loop_instance(4, 0.1).unwrap().estimate_beta(500, &mut rng), 0.0);
        let mdp = lazy_chain_mdp(3, 1, 0.2).unwrap();
        let ilp = IlProblem::new(mdp, Policy::deterministic(2, &[1, 0, 1]).unwrap(), 0.05).unwrap();
        assert_eq!(ilp.estimate_beta(500, &mut rng), 0.0);
        assert_eq!(ilp.constants().beta, 0.0);
    }

    #[test]
    fn swap_chain_beta_is_positive() {
        let mdp = swap_chain_mdp(vec![0.5, 0.5], 2).unwrap();
        let ilp = IlProblem::new(mdp, Policy::deterministic(2, &[0, 1]).unwrap(), 0.0).unwrap();
        let b = ilp.constants().beta;
        assert!(b > 0.0 && b.is_finite());
    }

    #[test]
    fn chain_instance_is_strongly_monotone() {
        let ilp = chain_instance().unwrap();
        let c = ilp.constants();
        assert!(c.alpha > c.beta, "alpha {} beta {}", c.alpha, c.beta);
        assert!(c.smoothness <= 1.0);
    }

    #[test]
    fn alpha_bound_holds_on_samples() {
        let ilp = chain_instance().unwrap();
        let mut rng = seeded_rng(9);
        let c = ilp.constants();
        for _ in 0..500 {
            let d = ilp.state_distribution(&ilp.decision_set().sample(&mut rng));
            assert!(d.iter().all(|v| *v >= c.alpha - 1e-15 && *v <= c.smoothness + 1e-15));
        }
    }

    #[test]
    fn initial_distribution_must_be_positive() {
        let mdp = swap_chain_mdp(vec![1.0, 0.0], 2).unwrap();
        assert!(IlProblem::new(mdp, Policy::deterministic(2, &[0, 0]).unwrap(), 0.0).is_err());
    }

    #[test]
    fn self_loop_equilibrium_is_projected_expert() {
        let ilp = self_loop_instance(3, 0.2).unwrap();
        let sol = solve_problem(&ilp, 1e-10).unwrap();
        assert!(vector::distance(&sol.x_star, &[0.8, 0.2, 0.8, 0.2]) <= 1e-9);
    }

    #[test]
    fn horizon_one_rollout_touches_one_block() {
        let ilp = IlProblem::new(
            lazy_chain_mdp(3, 1, 0.5).unwrap(),
            Policy::deterministic(2, &[0, 0, 0]).unwrap(),
            0.0,
        )
        .unwrap();
        let mut rng = seeded_rng(4);
        let g = ilp.rollout_feedback(&[0.5; 6], &mut rng);
        let touched = g.chunks(2).filter(|b| b.iter().any(|v| *v != 0.0)).count();
        assert_eq!(touched, 1);
    }

    #[test]
    fn deterministic_rollout_matches_visitation_gradient() {
        // always swapping from state 0 visits 0, 1, 0
        let mdp = swap_chain_mdp(vec![1.0, 0.0], 3).unwrap();
        let pi = [0.0, 1.0, 0.0, 1.0];
        let mut rng = seeded_rng(5);
        let states = mdp.sample_episode(&pi, &mut rng);
        assert_eq!(states, vec![0, 1, 0]);
        assert_eq!(mdp.sample_episode(&pi, &mut rng), states);
        let ilp = IlProblem::new(
            swap_chain_mdp(vec![0.5, 0.5], 3).unwrap(),
            Policy::deterministic(2, &[0, 0]).unwrap(),
            0.0,
        )
        .unwrap();
        let g = ilp.episode_gradient(&pi, &states);
        let expected = [-2.0 / 3.0, 2.0 / 3.0, -1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in g.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn spec_file_round_trip() {
        let text = "\
# two-state swap chain
states 2
actions 2
horizon 3
initial uniform
transition 0 0 1 0
transition 0 1 0 1
transition 1 0 0 1
transition 1 1 1 0
expert 0 1 0
expert 1 0.25 0.75
";
        let spec: MdpSpec = text.parse().unwrap();
        assert_eq!(spec.mdp.num_states(), 2);
        assert_eq!(spec.mdp.horizon(), 3);
        assert_eq!(spec.expert.row(1), &[0.25, 0.75]);
        let again: MdpSpec = spec.to_text().parse().unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn spec_file_errors_carry_line_numbers() {
        let missing = "states 2\nactions 1\nhorizon 2\ninitial 0.5 0.5\ntransition 0 0 1 0\nexpert 0 1\nexpert 1 1\n";
        assert!(matches!(
            missing.parse::<MdpSpec>(),
            Err(crate::error::ColError::MdpParse { message, .. }) if message.contains("missing transition (1, 0)")
        ));
        let early = "transition 0 0 1\n";
        assert!(matches!(early.parse::<MdpSpec>(), Err(crate::error::ColError::MdpParse { line: 1, .. })));
        let bad_row = "states 1\nactions 1\nhorizon 1\ninitial 1\ntransition 0 0 0.5\nexpert 0 1\n";
        assert!(matches!(bad_row.parse::<MdpSpec>(), Err(crate::error::ColError::InvalidMdp(_))));
        assert!("states 1\nfoo 2\n".parse::<MdpSpec>().is_err());
    }
}
