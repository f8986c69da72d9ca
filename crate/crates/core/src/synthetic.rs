//! Quadratic bifunctions `f_x(x') = (alpha/2) ||x' - A x - b||^2` with
//! analytic regularity constants.
//!
//! For this family `grad f_x(x') = alpha (x' - A x - b)`, so `f_x(.)` is
//! `alpha`-strongly convex and `alpha`-smooth, and `x -> grad f_x(x')` is
//! `alpha ||A||_2`-Lipschitz. Because every `f_x` has Hessian `alpha I`, the
//! constrained minimizer of any sum of them is the Euclidean projection of
//! the unconstrained one, which gives exact per-round minimizers and an exact
//! follow-the-leader update on every supported set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ColError, Result};
use crate::geometry::DecisionSet;
use crate::protocol::{ColProblem, Constants, Provenance};
use crate::vector;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.data[i * dim + i] = scale;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = *v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ColError::InvalidProblem("ragged matrix rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.cols)
            .map(|row| vector::dot(row, x))
            .collect()
    }

    pub fn transpose_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, yi) in self.data.chunks(self.cols).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        out
    }

    /// `I - self`
    pub fn identity_minus(&self) -> Matrix {
        let mut m = self.clone();
        for v in m.data.iter_mut() {
            *v = -*v;
        }
        for i in 0..self.rows.min(self.cols) {
            m.data[i * self.cols + i] += 1.0;
        }
        m
    }

    /// Solves `self * x = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.rows;
        if n != self.cols || rhs.len() != n {
            return None;
        }
        let mut a = self.data.clone();
        let mut b = rhs.to_vec();
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
            if a[pivot * n + col].abs() < 1e-14 {
                return None;
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(col * n + k, pivot * n + k);
                }
                b.swap(col, pivot);
            }
            for row in col + 1..n {
                let factor = a[row * n + col] / a[col * n + col];
                for k in col..n {
                    a[row * n + k] -= factor * a[col * n + k];
                }
                b[row] -= factor * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let tail: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
            x[row] = (b[row] - tail) / a[row * n + row];
        }
        Some(x)
    }
}

const POWER_ITERATION_LIMIT: usize = 100_000;

/// Largest singular value by power iteration on `A^T A`.
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    if a.rows() != a.cols() {
        return Err(ColError::InvalidProblem(format!(
            "spectral norm needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.cols();
    if n == 0 || a.data.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    // Fixed pseudo-random start: never orthogonal to the top singular vector
    // except on a measure-zero set.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATION_LIMIT {
        let nv = vector::norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let w = a.transpose_mul_vec(&a.mul_vec(&v));
        let next = vector::norm(&w);
        if (next - estimate).abs() <= 1e-10 * next {
            return Ok(next.sqrt());
        }
        estimate = next;
        v = w;
    }
    Err(ColError::NonConvergence {
        iterations: POWER_ITERATION_LIMIT,
        residual: estimate,
        best: v,
    })
}

#[derive(Debug, Clone)]
pub struct QuadraticCol {
    a: Matrix,
    b: Vec<f64>,
    alpha: f64,
    set: DecisionSet,
    a_norm: f64,
    constants: Constants,
}

impl QuadraticCol {
    pub fn new(a: Matrix, b: Vec<f64>, alpha: f64, set: DecisionSet) -> Result<Self> {
        let d = set.dimension();
        if a.rows() != d || a.cols() != d || b.len() != d {
            return Err(ColError::DimensionMismatch {
                expected: d,
                got: if b.len() != d { b.len() } else { a.rows().max(a.cols()) },
            });
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(ColError::InvalidProblem(format!("alpha must be positive, got {alpha}")));
        }
        let a_norm = spectral_norm(&a)?;
        let mut problem = Self {
            a,
            b,
            alpha,
            set,
            a_norm,
            constants: Constants {
                alpha,
                beta: alpha * a_norm,
                smoothness: alpha,
                grad_bound: f64::INFINITY,
                beta_provenance: Provenance::Analytic,
            },
        };
        problem.constants.grad_bound = problem.gradient_bound();
        Ok(problem)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn offset(&self) -> &[f64] {
        &self.b
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn spectral_norm(&self) -> f64 {
        self.a_norm
    }

    /// `||A||_2 < 1`, i.e. `alpha > beta`.
    pub fn has_mu_guarantee(&self) -> bool {
        self.a_norm < 1.0
    }

    /// `A x + b`, the unconstrained minimizer of `f_x`.
    pub fn target(&self, query: &[f64]) -> Vec<f64> {
        self.a
            .mul_vec(query)
            .into_iter()
            .zip(&self.b)
            .map(|(v, b)| v + b)
            .collect()
    }

    /// `(I - A)^{-1} b`, the unconstrained fixed point, when `I - A` is invertible.
    pub fn unconstrained_equilibrium(&self) -> Option<Vec<f64>> {
        self.a.identity_minus().solve(&self.b)
    }

    /// Closed-form equilibrium, valid when `||A|| < 1` and the fixed point is feasible.
    pub fn closed_form_equilibrium(&self) -> Option<Vec<f64>> {
        if !self.has_mu_guarantee() {
            return None;
        }
        if self.a_norm == 0.0 {
            return self.set.project_point(&self.b).ok();
        }
        self.unconstrained_equilibrium().filter(|x| self.set.contains(x))
    }

    /// Strict bound on `max_{x in X} ||alpha ((I - A) x - b)||`: exact over
    /// vertices when the set is a small polytope, otherwise the triangle bound.
    fn gradient_bound(&self) -> f64 {
        let m = self.a.identity_minus();
        let residual = |x: &[f64]| vector::distance(&m.mul_vec(x), &self.b);
        let worst = match self.set.vertices(1 << 16) {
            Some(vs) => vs.iter().map(|v| residual(v)).fold(0.0, f64::max),
            None => {
                let m_norm = spectral_norm(&m).unwrap_or(1.0 + self.a_norm);
                m_norm * self.set.max_norm() + vector::norm(&self.b)
            }
        };
        (self.alpha * worst * (1.0 + 1e-9)).max(1e-12)
    }
}

impl ColProblem for QuadraticCol {
    fn decision_set(&self) -> &DecisionSet {
        &self.set
    }

    fn constants(&self) -> Constants {
        self.constants
    }

    fn eval(&self, query: &[f64], decision: &[f64]) -> f64 {
        0.5 * self.alpha * vector::distance_sq(decision, &self.target(query))
    }

    fn grad(&self, query: &[f64], decision: &[f64]) -> Vec<f64> {
        let t = self.target(query);
        decision
            .iter()
            .zip(&t)
            .map(|(x, t)| self.alpha * (x - t))
            .collect()
    }

    fn round_minimizer(&self, query: &[f64]) -> Option<Vec<f64>> {
        self.set.project_point(&self.target(query)).ok()
    }

    fn leader(&self, query_sum: &[f64], count: usize) -> Option<Vec<f64>> {
        if count == 0 {
            return None;
        }
        let mean: Vec<f64> = query_sum.iter().map(|v| v / count as f64).collect();
        self.round_minimizer(&mean)
    }
}

/// The reference instance `A = 0.5 I`, `b = 0`, `alpha = 1` on `[-1, 1]^2`.
pub fn q0() -> QuadraticCol {
    QuadraticCol::new(
        Matrix::scaled_identity(2, 0.5),
        vec![0.0, 0.0],
        1.0,
        DecisionSet::cube(2, 1.0).expect("valid box"),
    )
    .expect("valid instance")
}

/// `q0` shifted by `b = (0.2, 0.2)`; equilibrium `(0.4, 0.4)`.
pub fn q1() -> QuadraticCol {
    QuadraticCol::new(
        Matrix::scaled_identity(2, 0.5),
        vec![0.2, 0.2],
        1.0,
        DecisionSet::cube(2, 1.0).expect("valid box"),
    )
    .expect("valid instance")
}

/// Random instance on `[-1, 1]^dim` with `||A||_2 = norm`, Gaussian `A`
/// rescaled to that norm, `b` uniform in `[-0.5, 0.5]^dim` and `alpha`
/// uniform in `[0.5, 2]`.
pub fn random_quadratic<R: Rng + ?Sized>(rng: &mut R, dim: usize, norm: f64) -> Result<QuadraticCol> {
    let raw: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let mut a = Matrix::from_rows(&raw)?;
    let scale = spectral_norm(&a)?;
    if scale > 0.0 {
        a.data.iter_mut().for_each(|v| *v *= norm / scale);
    }
    let b = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
    let alpha = rng.random_range(0.5..2.0);
    QuadraticCol::new(a, b, alpha, DecisionSet::cube(dim, 1.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spectral_norm_examples() {
        assert_abs_diff_eq!(spectral_norm(&Matrix::scaled_identity(3, 0.5)).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(spectral_norm(&Matrix::diagonal(&[0.9, 0.1])).unwrap(), 0.9, epsilon = 1e-9);
        assert_abs_diff_eq!(spectral_norm(&Matrix::diagonal(&[0.1, -0.9])).unwrap(), 0.9, epsilon = 1e-9);
        let c = 1.7;
        let rot = Matrix::from_rows(&[vec![0.0, -c], vec![c, 0.0]]).unwrap();
        assert_abs_diff_eq!(spectral_norm(&rot).unwrap(), c, epsilon = 1e-12);
        assert_eq!(spectral_norm(&Matrix::zeros(2, 2)).unwrap(), 0.0);
        assert!(spectral_norm(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn spectral_norm_of_non_normal_matrix() {
        // [[1, 1], [0, 1]] has singular values golden ratio and its inverse.
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(spectral_norm(&m).unwrap(), golden, epsilon = 1e-9);
    }

    #[test]
    fn q0_constants_and_equilibrium() {
        let q = q0();
        let c = q.constants();
        assert_eq!(c.alpha, 1.0);
        assert_abs_diff_eq!(c.beta, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c.mu(), 0.5, epsilon = 1e-12);
        assert_eq!(c.smoothness, 1.0);
        // max ||0.5 x|| over the box corners is 0.5 sqrt 2
        assert!(c.grad_bound > 0.5 * 2f64.sqrt());
        assert!(c.grad_bound < 0.5 * 2f64.sqrt() + 1e-8);
        assert_eq!(q.closed_form_equilibrium().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn q1_equilibrium() {
        let x = q1().closed_form_equilibrium().unwrap();
        assert_abs_diff_eq!(x[0], 0.4, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 0.4, epsilon = 1e-14);
    }

    #[test]
    fn zero_matrix_decouples_rounds() {
        let set = DecisionSet::cube(2, 1.0).unwrap();
        let q = QuadraticCol::new(Matrix::zeros(2, 2), vec![3.0, 0.25], 2.0, set).unwrap();
        assert_eq!(q.constants().beta, 0.0);
        assert_eq!(q.closed_form_equilibrium().unwrap(), vec![1.0, 0.25]);
        assert_eq!(q.eval(&[1.0, 1.0], &[0.5, 0.5]), q.eval(&[-1.0, 0.3], &[0.5, 0.5]));
    }

    #[test]
    fn loss_and_gradient_by_hand() {
        let q = q0();
        assert_eq!(q.eval(&[1.0, 1.0], &[1.0, 1.0]), 0.25);
        assert_eq!(q.operator(&[1.0, 1.0]), vec![0.5, 0.5]);
        assert_eq!(q.eval(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn expanding_map_is_flagged() {
        let set = DecisionSet::cube(2, 1.0).unwrap();
        let q = QuadraticCol::new(Matrix::scaled_identity(2, 1.5), vec![0.0; 2], 1.0, set).unwrap();
        assert!(!q.has_mu_guarantee());
        assert!(q.constants().mu() < 0.0);
        assert!(q.closed_form_equilibrium().is_none());
    }

    #[test]
    fn dimension_mismatch() {
        let set = DecisionSet::cube(2, 1.0).unwrap();
        assert!(QuadraticCol::new(Matrix::scaled_identity(3, 0.5), vec![0.0; 2], 1.0, set.clone()).is_err());
        assert!(QuadraticCol::new(Matrix::scaled_identity(2, 0.5), vec![0.0; 2], 0.0, set).is_err());
    }

    #[test]
    fn random_instance_has_requested_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_quadratic(&mut rng, 3, 0.7).unwrap();
        assert_abs_diff_eq!(q.spectral_norm(), 0.7, epsilon = 1e-8);
        assert!(q.has_mu_guarantee());
        assert_abs_diff_eq!(q.constants().beta, q.alpha() * q.spectral_norm(), epsilon = 1e-15);
    }

    #[test]
    fn linear_solve() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let x = m.solve(&[3.0, 5.0]).unwrap();
        assert_abs_diff_eq!(x[0], 0.8, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 1.4, epsilon = 1e-14);
    }
}
