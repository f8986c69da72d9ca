//! Online learners: projected online gradient descent, entropic mirror
//! descent, follow-the-leader and extragradient.

use crate::error::{ColError, Result};
use crate::geometry::{project_floored_simplex, DecisionSet, SetKind};
use crate::protocol::{ColProblem, FeedbackOracle};
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgorithmKind {
    OnlineGradientDescent,
    MirrorDescent,
    FollowTheLeader,
    Extragradient,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::OnlineGradientDescent => "ogd",
            AlgorithmKind::MirrorDescent => "mirror-descent",
            AlgorithmKind::FollowTheLeader => "ftl",
            AlgorithmKind::Extragradient => "extragradient",
        }
    }

    pub fn all() -> [AlgorithmKind; 4] {
        [
            AlgorithmKind::OnlineGradientDescent,
            AlgorithmKind::MirrorDescent,
            AlgorithmKind::FollowTheLeader,
            AlgorithmKind::Extragradient,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `eta_n = eta_0 / sqrt(n)`
    InverseSqrt(f64),
}

impl StepSchedule {
    pub fn at(&self, round: usize) -> f64 {
        match *self {
            StepSchedule::Constant(eta) => eta,
            StepSchedule::InverseSqrt(eta0) => eta0 / (round as f64).sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        let eta = match *self {
            StepSchedule::Constant(e) | StepSchedule::InverseSqrt(e) => e,
        };
        if !(eta.is_finite() && eta > 0.0) {
            return Err(ColError::Config(format!("step size must be positive, got {eta}")));
        }
        Ok(())
    }
}

/// Learner state. The round counter starts at 1; `decision` is `x_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmState {
    kind: AlgorithmKind,
    decision: Vec<f64>,
    round: usize,
    schedule: StepSchedule,
    /// Running sum of query points (follow-the-leader only).
    query_sum: Vec<f64>,
}

impl AlgorithmState {
    pub fn new(kind: AlgorithmKind, schedule: StepSchedule, x1: Vec<f64>) -> Result<Self> {
        schedule.validate()?;
        let query_sum = match kind {
            AlgorithmKind::FollowTheLeader => vec![0.0; x1.len()],
            _ => Vec::new(),
        };
        Ok(Self {
            kind,
            decision: x1,
            round: 1,
            schedule,
            query_sum,
        })
    }

    pub fn kind(&self) -> AlgorithmKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn decision(&self) -> &[f64] {
        &self.decision
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn schedule(&self) -> StepSchedule {
        self.schedule
    }

    /// Step size for the current round.
    pub fn step_size(&self) -> f64 {
        self.schedule.at(self.round)
    }

    /// Moves from `x_n` to `x_{n+1}` given the round's feedback `g_n`.
    pub fn advance(
        &mut self,
        problem: &dyn ColProblem,
        oracle: &mut FeedbackOracle,
        feedback: &[f64],
    ) -> Result<()> {
        let set = problem.decision_set();
        match self.kind {
            AlgorithmKind::OnlineGradientDescent => ogd_step(self, set, feedback),
            AlgorithmKind::MirrorDescent => mirror_descent_step(self, set, feedback),
            AlgorithmKind::FollowTheLeader => {
                let query = self.decision.clone();
                ftl_step(self, problem, &query)
            }
            AlgorithmKind::Extragradient => extragradient_from(self, set, feedback, |y| {
                oracle.feedback(problem, y)
            }),
        }
    }

    fn commit(&mut self, next: Vec<f64>) {
        self.decision = next;
        self.round += 1;
    }
}

fn check_feedback(g: &[f64], dim: usize) -> Result<()> {
    if g.len() != dim {
        return Err(ColError::DimensionMismatch {
            expected: dim,
            got: g.len(),
        });
    }
    if !vector::all_finite(g) {
        return Err(ColError::Feedback(format!("non-finite gradient {g:?}")));
    }
    Ok(())
}

/// `x_{n+1} = P_X(x_n - eta_n g_n)`
pub fn ogd_step(state: &mut AlgorithmState, set: &DecisionSet, g: &[f64]) -> Result<()> {
    check_feedback(g, state.decision.len())?;
    let eta = state.step_size();
    let next = set.project_point(&vector::descend(&state.decision, eta, g))?;
    state.commit(next);
    Ok(())
}

/// Entropic (multiplicative-weights) step on each simplex block, followed by
/// a Euclidean projection onto the floored simplex when the floor is
/// violated. On other sets the mirror map is Euclidean and this is `ogd_step`.
pub fn mirror_descent_step(state: &mut AlgorithmState, set: &DecisionSet, g: &[f64]) -> Result<()> {
    let (block_size, floor) = match set.kind() {
        SetKind::Simplices {
            block_size, floor, ..
        } => (*block_size, *floor),
        _ => return ogd_step(state, set, g),
    };
    check_feedback(g, state.decision.len())?;
    let eta = state.step_size();
    let mut next = Vec::with_capacity(g.len());
    for (block, grad) in state.decision.chunks(block_size).zip(g.chunks(block_size)) {
        let exponents: Vec<f64> = block
            .iter()
            .zip(grad)
            .map(|(p, gi)| if *p > 0.0 { p.ln() - eta * gi } else { f64::NEG_INFINITY })
            .collect();
        let shift = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(ColError::Numeric("simplex block lost all mass".into()));
        }
        let weights: Vec<f64> = exponents.iter().map(|e| (e - shift).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut p: Vec<f64> = weights.iter().map(|w| w / total).collect();
        if p.iter().any(|v| *v < floor) {
            p = project_floored_simplex(&p, floor);
        }
        next.extend(p);
    }
    state.commit(next);
    Ok(())
}

/// `x_{n+1} = argmin_X sum_{k <= n} f_{x_k}(.)`, using the problem's exact leader.
pub fn ftl_step(state: &mut AlgorithmState, problem: &dyn ColProblem, query: &[f64]) -> Result<()> {
    if state.query_sum.len() != query.len() {
        state.query_sum = vec![0.0; query.len()];
    }
    for (acc, q) in state.query_sum.iter_mut().zip(query) {
        *acc += q;
    }
    let next = problem
        .leader(&state.query_sum, state.round)
        .ok_or_else(|| ColError::Unsupported {
            algorithm: "ftl",
            reason: "problem exposes no closed-form leader".into(),
        })?;
    state.commit(next);
    Ok(())
}

/// `x_half = P(x_n - eta F(x_n))`, `x_{n+1} = P(x_n - eta F(x_half))`.
pub fn extragradient_step<F>(state: &mut AlgorithmState, set: &DecisionSet, mut operator: F) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let first = operator(&state.decision)?;
    extragradient_from(state, set, &first, operator)
}

fn extragradient_from<F>(
    state: &mut AlgorithmState,
    set: &DecisionSet,
    first: &[f64],
    mut operator: F,
) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let check = |v: &[f64]| -> Result<()> {
        if vector::all_finite(v) {
            Ok(())
        } else {
            Err(ColError::Numeric(format!("non-finite operator value {v:?}")))
        }
    };
    check(first)?;
    let eta = state.step_size();
    let half = set.project_point(&vector::descend(&state.decision, eta, first))?;
    let second = operator(&half)?;
    check(&second)?;
    let next = set.project_point(&vector::descend(&state.decision, eta, &second))?;
    state.commit(next);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn state(kind: AlgorithmKind, eta: f64, x: Vec<f64>) -> AlgorithmState {
        AlgorithmState::new(kind, StepSchedule::Constant(eta), x).unwrap()
    }

    #[test]
    fn ogd_step_on_box() {
        let set = DecisionSet::cube(2, 1.0).unwrap();
        let mut s = state(AlgorithmKind::OnlineGradientDescent, 1.0, vec![1.0, 1.0]);
        ogd_step(&mut s, &set, &[0.5, 0.5]).unwrap();
        assert_eq!(s.decision(), &[0.5, 0.5]);
        assert_eq!(s.round(), 2);
    }

    #[test]
    fn ogd_zero_gradient_is_stationary() {
        let set = DecisionSet::cube(3, 1.0).unwrap();
        let x = vec![0.1, -0.7, 0.3];
        let mut s = state(AlgorithmKind::OnlineGradientDescent, 0.3, x.clone());
        ogd_step(&mut s, &set, &[0.0; 3]).unwrap();
        assert_eq!(s.decision(), x.as_slice());
    }

    #[test]
    fn ogd_on_simplex_stays_at_vertex() {
        let set = DecisionSet::simplices(1, 2, 0.0).unwrap();
        let mut s = state(AlgorithmKind::OnlineGradientDescent, 1.0, vec![1.0, 0.0]);
        ogd_step(&mut s, &set, &[-10.0, 0.0]).unwrap();
        assert_eq!(s.decision(), &[1.0, 0.0]);
    }

    #[test]
    fn ogd_rejects_non_finite_feedback() {
        let set = DecisionSet::cube(2, 1.0).unwrap();
        let mut s = state(AlgorithmKind::OnlineGradientDescent, 1.0, vec![0.0, 0.0]);
        assert!(matches!(
            ogd_step(&mut s, &set, &[f64::NAN, 0.0]),
            Err(ColError::Feedback(_))
        ));
    }

    #[test]
    fn inverse_sqrt_schedule() {
        let s = StepSchedule::InverseSqrt(2.0);
        assert_eq!(s.at(1), 2.0);
        assert_eq!(s.at(4), 1.0);
        assert!(AlgorithmState::new(
            AlgorithmKind::OnlineGradientDescent,
            StepSchedule::Constant(0.0),
            vec![0.0]
        )
        .is_err());
    }

    #[test]
    fn mirror_descent_multiplicative_update() {
        let set = DecisionSet::simplices(1, 2, 0.0).unwrap();
        let mut s = state(AlgorithmKind::MirrorDescent, 1.0, vec![0.5, 0.5]);
        mirror_descent_step(&mut s, &set, &[2f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(s.decision()[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.decision()[1], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn mirror_descent_zero_gradient_and_normalisation() {
        let set = DecisionSet::simplices(2, 3, 0.05).unwrap();
        let x = vec![0.2, 0.3, 0.5, 0.9, 0.05, 0.05];
        let mut s = state(AlgorithmKind::MirrorDescent, 0.7, x.clone());
        mirror_descent_step(&mut s, &set, &[0.0; 6]).unwrap();
        for (a, b) in s.decision().iter().zip(&x) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        mirror_descent_step(&mut s, &set, &[30.0, -4.0, 1.0, -50.0, 2.0, 9.0]).unwrap();
        for block in s.decision().chunks(3) {
            assert_abs_diff_eq!(block.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(block.iter().all(|p| *p >= 0.05 - 1e-15));
        }
    }

    #[test]
    fn mirror_descent_on_box_is_euclidean() {
        let set = DecisionSet::cube(2, 1.0).unwrap();
        let mut s = state(AlgorithmKind::MirrorDescent, 1.0, vec![1.0, 1.0]);
        mirror_descent_step(&mut s, &set, &[0.5, 0.5]).unwrap();
        assert_eq!(s.decision(), &[0.5, 0.5]);
    }

    #[test]
    fn extragradient_with_zero_operator_is_stationary() {
        let set = DecisionSet::cube(2, 1.0).unwrap();
        let mut s = state(AlgorithmKind::Extragradient, 1.0, vec![0.3, 0.4]);
        extragradient_step(&mut s, &set, |y| Ok(vec![0.0; y.len()])).unwrap();
        assert_eq!(s.decision(), &[0.3, 0.4]);
    }

    #[test]
    fn extragradient_two_step_arithmetic() {
        let set = DecisionSet::cube(2, 1.0).unwrap();
        let mut s = state(AlgorithmKind::Extragradient, 1.0, vec![1.0, 1.0]);
        extragradient_step(&mut s, &set, |y| Ok(y.iter().map(|v| 0.5 * v).collect())).unwrap();
        assert_eq!(s.decision(), &[0.75, 0.75]);
    }

    #[test]
    fn extragradient_rejects_nan_operator() {
        let set = DecisionSet::cube(1, 1.0).unwrap();
        let mut s = state(AlgorithmKind::Extragradient, 1.0, vec![0.0]);
        assert!(matches!(
            extragradient_step(&mut s, &set, |_| Ok(vec![f64::INFINITY])),
            Err(ColError::Numeric(_))
        ));
    }
}
