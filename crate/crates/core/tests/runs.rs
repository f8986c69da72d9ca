use col_core::equilibrium::solve_problem;
use col_core::imitation::chain_instance;
use col_core::protocol::NoiseModel;
use col_core::synthetic::{q0, q1};
use col_core::vector;
use col_core::{
    compute_report, run, AlgorithmKind, AlgorithmState, ColProblem, FeedbackMode, FeedbackOracle, StepSchedule,
};

fn contraction_holds(problem: &dyn ColProblem, x1: Vec<f64>, rounds: usize) {
    let c = problem.constants();
    let eta = c.mu() / (c.smoothness + c.beta).powi(2);
    let x_star = solve_problem(problem, 1e-13).unwrap().x_star;
    let rho = c.contraction_factor(eta);
    let mut state = AlgorithmState::new(AlgorithmKind::OnlineGradientDescent, StepSchedule::Constant(eta), x1).unwrap();
    let log = run(problem, &mut FeedbackOracle::deterministic(), &mut state, rounds).unwrap();
    let first = vector::distance_sq(&log.decisions[0], &x_star);
    for (n, x) in log.decisions.iter().enumerate() {
        let bound = rho.powi(n as i32) * first;
        let err = vector::distance_sq(x, &x_star);
        assert!(err <= bound * (1.0 + 1e-9) + 1e-24, "round {}: {err} > {bound}", n + 1);
    }
}

#[test]
fn ogd_contracts_on_q0_and_chain() {
    contraction_holds(&q0(), vec![1.0, -1.0], 500);
    let chain = chain_instance().unwrap();
    let x1 = vec![0.1, 0.9, 0.5, 0.5, 0.9, 0.1];
    contraction_holds(&chain, x1, 500);
}

#[test]
fn deterministic_q0_regret_levels_off() {
    let q = q0();
    let x_star = solve_problem(&q, 1e-12).unwrap();
    let c = q.constants();
    let eta = c.mu() / (c.smoothness + c.beta).powi(2);
    let mut state = AlgorithmState::new(AlgorithmKind::OnlineGradientDescent, StepSchedule::Constant(eta), vec![1.0, 1.0]).unwrap();
    let log = run(&q, &mut FeedbackOracle::deterministic(), &mut state, 500).unwrap();
    let report = compute_report(&q, &log, Some(&x_star), 1e-9).unwrap();
    let tail = &report.dynamic_regret[400..];
    assert!(tail.last().unwrap() - tail[0] <= 1e-12);
    assert!(report.check_thm2().unwrap().passed);
    assert!(report.check_cor1().unwrap().unwrap().passed);
}

#[test]
fn seeded_stochastic_runs_repeat_bitwise() {
    let chain = chain_instance().unwrap();
    let go = |seed| {
        let mut oracle = FeedbackOracle::new(FeedbackMode::StochasticGradient(NoiseModel::Rollout), seed);
        let mut state = AlgorithmState::new(
            AlgorithmKind::OnlineGradientDescent,
            StepSchedule::InverseSqrt(1.0),
            chain.decision_set().center(),
        )
        .unwrap();
        run(&chain, &mut oracle, &mut state, 200).unwrap()
    };
    assert!(go(7).same_trajectory(&go(7)));
    assert!(!go(7).same_trajectory(&go(8)));
    let noisy = |seed| {
        let mut oracle = FeedbackOracle::new(FeedbackMode::StochasticGradient(NoiseModel::Gaussian { sigma: 0.3 }), seed);
        let mut state =
            AlgorithmState::new(AlgorithmKind::MirrorDescent, StepSchedule::InverseSqrt(0.5), vec![0.9, 0.9]).unwrap();
        run(&q1(), &mut oracle, &mut state, 200).unwrap()
    };
    assert!(noisy(3).same_trajectory(&noisy(3)));
}

#[test]
fn ogd_static_regret_within_sqrt_envelope() {
    for problem in [Box::new(q0()) as Box<dyn ColProblem>, Box::new(q1()), Box::new(chain_instance().unwrap())] {
        let c = problem.constants();
        let diameter = problem.decision_set().diameter();
        let x_star = solve_problem(problem.as_ref(), 1e-10).unwrap();
        let mut state = AlgorithmState::new(
            AlgorithmKind::OnlineGradientDescent,
            StepSchedule::InverseSqrt(diameter / c.grad_bound),
            problem.decision_set().center(),
        )
        .unwrap();
        let log = run(problem.as_ref(), &mut FeedbackOracle::deterministic(), &mut state, 2000).unwrap();
        let report = compute_report(problem.as_ref(), &log, Some(&x_star), 1e-9).unwrap();
        let eq = report.equilibrium.unwrap();
        for (n, r) in eq.static_regret.iter().enumerate() {
            assert!(*r <= 1.5 * c.grad_bound * diameter * ((n + 1) as f64).sqrt());
        }
    }
}
