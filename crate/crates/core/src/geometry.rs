//! Decision sets and Euclidean projections onto them.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ColError, Result};
use crate::vector;

/// Absolute tolerance used for set membership.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum SetKind {
    /// Axis-aligned box `lower <= x <= upper`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Closed Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
    /// Product of `num_blocks` simplices of `block_size` entries each, every
    /// entry bounded below by `floor`.
    Simplices {
        num_blocks: usize,
        block_size: usize,
        floor: f64,
    },
}

/// A nonempty compact convex subset of `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionSet {
    kind: SetKind,
    dimension: usize,
    diameter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub point: Vec<f64>,
    /// `||input - point||`
    pub residual: f64,
}

impl DecisionSet {
    pub fn new(kind: SetKind) -> Result<Self> {
        let dimension = match &kind {
            SetKind::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(ColError::InvalidSet(format!(
                        "box bounds have lengths {} and {}",
                        lower.len(),
                        upper.len()
                    )));
                }
                if lower
                    .iter()
                    .zip(upper)
                    .any(|(l, u)| !l.is_finite() || !u.is_finite() || l > u)
                {
                    return Err(ColError::InvalidSet(
                        "box bounds must be finite with lower <= upper".into(),
                    ));
                }
                lower.len()
            }
            SetKind::Ball { center, radius } => {
                if center.is_empty() || !vector::all_finite(center) {
                    return Err(ColError::InvalidSet("ball center must be finite".into()));
                }
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(ColError::InvalidSet(format!("bad ball radius {radius}")));
                }
                center.len()
            }
            SetKind::Simplices {
                num_blocks,
                block_size,
                floor,
            } => {
                if *num_blocks == 0 || *block_size == 0 {
                    return Err(ColError::InvalidSet(
                        "simplex product needs at least one block of one entry".into(),
                    ));
                }
                if !(floor.is_finite() && *floor >= 0.0) {
                    return Err(ColError::InvalidSet(format!("bad simplex floor {floor}")));
                }
                if floor * (*block_size as f64) > 1.0 + MEMBERSHIP_TOL {
                    return Err(ColError::InvalidSet(format!(
                        "floor {floor} times block size {block_size} exceeds 1"
                    )));
                }
                num_blocks * block_size
            }
        };
        let diameter = closed_form_diameter(&kind);
        Ok(Self {
            kind,
            dimension,
            diameter,
        })
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        Self::new(SetKind::Box { lower, upper })
    }

    /// `[-r, r]^d`
    pub fn cube(dimension: usize, half_width: f64) -> Result<Self> {
        Self::boxed(vec![-half_width; dimension], vec![half_width; dimension])
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        Self::new(SetKind::Ball { center, radius })
    }

    pub fn simplices(num_blocks: usize, block_size: usize, floor: f64) -> Result<Self> {
        Self::new(SetKind::Simplices {
            num_blocks,
            block_size,
            floor,
        })
    }

    pub fn kind(&self) -> &SetKind {
        &self.kind
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// `max_{x, x'} ||x - x'||_2`, exact for every kind.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn is_simplex_product(&self) -> bool {
        matches!(self.kind, SetKind::Simplices { .. })
    }

    fn check_dimension(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dimension {
            return Err(ColError::DimensionMismatch {
                expected: self.dimension,
                got: y.len(),
            });
        }
        Ok(())
    }

    /// Largest constraint violation of `x`; zero for interior and boundary points.
    pub fn violation(&self, x: &[f64]) -> Result<f64> {
        self.check_dimension(x)?;
        if !vector::all_finite(x) {
            return Ok(f64::INFINITY);
        }
        let v = match &self.kind {
            SetKind::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| (l - v).max(v - u))
                .fold(0.0, f64::max),
            SetKind::Ball { center, radius } => (vector::distance(x, center) - radius).max(0.0),
            SetKind::Simplices {
                block_size, floor, ..
            } => x
                .chunks(*block_size)
                .map(|block| {
                    let low = block.iter().map(|p| floor - p).fold(0.0, f64::max);
                    let mass = (block.iter().sum::<f64>() - 1.0).abs();
                    low.max(mass)
                })
                .fold(0.0, f64::max),
        };
        Ok(v)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        matches!(self.violation(x), Ok(v) if v <= MEMBERSHIP_TOL)
    }

    /// Euclidean projection. Points already in the set (within
    /// [`MEMBERSHIP_TOL`]) are returned unchanged, which makes projection
    /// idempotent bit for bit.
    pub fn project(&self, y: &[f64]) -> Result<ProjectionResult> {
        self.check_dimension(y)?;
        if !vector::all_finite(y) {
            return Err(ColError::Numeric("cannot project a non-finite point".into()));
        }
        if self.violation(y)? <= MEMBERSHIP_TOL {
            return Ok(ProjectionResult {
                point: y.to_vec(),
                residual: 0.0,
            });
        }
        let point = match &self.kind {
            SetKind::Box { lower, upper } => y
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| v.clamp(*l, *u))
                .collect(),
            SetKind::Ball { center, radius } => {
                let dist = vector::distance(y, center);
                let scale = radius / dist;
                y.iter()
                    .zip(center)
                    .map(|(v, c)| c + (v - c) * scale)
                    .collect()
            }
            SetKind::Simplices {
                block_size, floor, ..
            } => {
                let mut out = Vec::with_capacity(y.len());
                for block in y.chunks(*block_size) {
                    out.extend(project_floored_simplex(block, *floor));
                }
                out
            }
        };
        let residual = vector::distance(y, &point);
        Ok(ProjectionResult { point, residual })
    }

    pub fn project_point(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.project(y)?.point)
    }

    /// A canonical interior (relative-interior for simplices) point.
    pub fn center(&self) -> Vec<f64> {
        match &self.kind {
            SetKind::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect()
            }
            SetKind::Ball { center, .. } => center.clone(),
            SetKind::Simplices { block_size, .. } => {
                vec![1.0 / *block_size as f64; self.dimension]
            }
        }
    }

    /// Random feasible point. Uniform on boxes and balls; uniform (Dirichlet(1))
    /// on each floored simplex block.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.kind {
            SetKind::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                .collect(),
            SetKind::Ball { center, radius } => {
                let d = center.len();
                let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                let n = vector::norm(&dir);
                let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
                if n == 0.0 {
                    return center.clone();
                }
                center
                    .iter()
                    .zip(&dir)
                    .map(|(c, v)| c + r * v / n)
                    .collect()
            }
            SetKind::Simplices {
                num_blocks,
                block_size,
                floor,
            } => {
                let scale = 1.0 - *block_size as f64 * floor;
                let mut out = Vec::with_capacity(self.dimension);
                for _ in 0..*num_blocks {
                    let raw: Vec<f64> = (0..*block_size)
                        .map(|_| -(1.0 - rng.random::<f64>()).ln())
                        .collect();
                    let total: f64 = raw.iter().sum();
                    out.extend(raw.iter().map(|v| floor + scale * v / total));
                }
                // Rounding can push a block sum a few ulps off 1; the
                // projection shortcut keeps the point as is when within tolerance.
                match self.project(&out) {
                    Ok(p) => p.point,
                    Err(_) => out,
                }
            }
        }
    }

    /// Extreme points, when the set is a polytope with at most `limit` of them.
    pub fn vertices(&self, limit: usize) -> Option<Vec<Vec<f64>>> {
        match &self.kind {
            SetKind::Box { lower, upper } => {
                let d = lower.len();
                if d >= usize::BITS as usize - 1 || (1usize << d) > limit {
                    return None;
                }
                Some(
                    (0..(1usize << d))
                        .map(|mask| {
                            (0..d)
                                .map(|i| if mask >> i & 1 == 1 { upper[i] } else { lower[i] })
                                .collect()
                        })
                        .collect(),
                )
            }
            SetKind::Ball { .. } => None,
            SetKind::Simplices {
                num_blocks,
                block_size,
                floor,
            } => {
                let count = (*block_size as f64).powi(*num_blocks as i32);
                if count > limit as f64 {
                    return None;
                }
                let top = 1.0 - (*block_size as f64 - 1.0) * floor;
                let block_vertices: Vec<Vec<f64>> = (0..*block_size)
                    .map(|a| {
                        (0..*block_size)
                            .map(|j| if j == a { top } else { *floor })
                            .collect()
                    })
                    .collect();
                let mut out = vec![Vec::new()];
                for _ in 0..*num_blocks {
                    out = out
                        .into_iter()
                        .flat_map(|prefix: Vec<f64>| {
                            block_vertices.iter().map(move |v| {
                                let mut p = prefix.clone();
                                p.extend_from_slice(v);
                                p
                            })
                        })
                        .collect();
                }
                Some(out)
            }
        }
    }

    /// `max_{x in X} ||x||_2`
    pub fn max_norm(&self) -> f64 {
        match &self.kind {
            SetKind::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l.abs().max(u.abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
            SetKind::Ball { center, radius } => vector::norm(center) + radius,
            SetKind::Simplices {
                num_blocks,
                block_size,
                floor,
            } => {
                let m = *block_size as f64;
                let top = 1.0 - (m - 1.0) * floor;
                (*num_blocks as f64 * (top * top + (m - 1.0) * floor * floor)).sqrt()
            }
        }
    }

    /// Per-coordinate bounds of the smallest enclosing box.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            SetKind::Box { lower, upper } => (lower.clone(), upper.clone()),
            SetKind::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            SetKind::Simplices {
                block_size, floor, ..
            } => {
                let top = 1.0 - (*block_size as f64 - 1.0) * floor;
                (vec![*floor; self.dimension], vec![top; self.dimension])
            }
        }
    }

    /// Removes the component of `v` normal to the affine hull of the set
    /// (block means for simplex products; identity otherwise).
    pub fn tangent_component(&self, v: &[f64]) -> Vec<f64> {
        match &self.kind {
            SetKind::Simplices { block_size, .. } => v
                .chunks(*block_size)
                .flat_map(|block| {
                    let mean = block.iter().sum::<f64>() / block.len() as f64;
                    block.iter().map(move |x| x - mean)
                })
                .collect(),
            _ => v.to_vec(),
        }
    }
}

fn closed_form_diameter(kind: &SetKind) -> f64 {
    match kind {
        SetKind::Box { lower, upper } => vector::distance(upper, lower),
        SetKind::Ball { radius, .. } => 2.0 * radius,
        SetKind::Simplices {
            num_blocks,
            block_size,
            floor,
        } => {
            if *block_size < 2 {
                0.0
            } else {
                let scale = (1.0 - *block_size as f64 * floor).max(0.0);
                (2.0 * *num_blocks as f64).sqrt() * scale
            }
        }
    }
}

/// Projection of `y` onto the standard simplex `{q >= 0, sum q = 1}` by
/// sorting and thresholding. Equal values are ordered by index.
pub fn project_standard_simplex(y: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&i, &j| y[j].total_cmp(&y[i]).then(i.cmp(&j)));
    let mut prefix = 0.0;
    let mut threshold = 0.0;
    for (k, &i) in order.iter().enumerate() {
        prefix += y[i];
        let candidate = (prefix - 1.0) / (k + 1) as f64;
        if y[i] - candidate > 0.0 {
            threshold = candidate;
        } else {
            break;
        }
    }
    y.iter().map(|v| (v - threshold).max(0.0)).collect()
}

/// Projection onto `{p : p_a >= floor, sum p = 1}` via `p = floor + (1 - m floor) q`.
pub fn project_floored_simplex(y: &[f64], floor: f64) -> Vec<f64> {
    let m = y.len() as f64;
    let scale = 1.0 - m * floor;
    if scale <= 0.0 {
        return vec![floor; y.len()];
    }
    let shifted: Vec<f64> = y.iter().map(|v| (v - floor) / scale).collect();
    project_standard_simplex(&shifted)
        .into_iter()
        .map(|q| floor + scale * q)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn box_projection_clips() {
        let set = DecisionSet::cube(2, 1.0).unwrap();
        let p = set.project(&[2.0, -3.0]).unwrap();
        assert_eq!(p.point, vec![1.0, -1.0]);
        assert_abs_diff_eq!(p.residual, (1.0f64 + 4.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn simplex_projection_of_far_point_hits_vertex() {
        let set = DecisionSet::simplices(1, 2, 0.0).unwrap();
        assert_eq!(set.project(&[2.0, 0.0]).unwrap().point, vec![1.0, 0.0]);
        assert_eq!(set.project(&[11.0, 0.0]).unwrap().point, vec![1.0, 0.0]);
    }

    #[test]
    fn simplex_projection_matches_grid_search() {
        // brute force over the segment {(t, 1-t)}
        let y = [0.3, 1.4];
        let proj = project_standard_simplex(&y);
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=100_000 {
            let t = i as f64 / 100_000.0;
            let d = (t - y[0]).powi(2) + (1.0 - t - y[1]).powi(2);
            if d < best.0 {
                best = (d, t);
            }
        }
        assert_abs_diff_eq!(proj[0], best.1, epsilon = 1e-5);
    }

    #[test]
    fn floored_simplex_projection() {
        let p = project_floored_simplex(&[1.0, 0.0], 0.1);
        assert_abs_diff_eq!(p[0], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.1, epsilon = 1e-15);
        assert_eq!(project_floored_simplex(&[3.0, -1.0], 0.5), vec![0.5, 0.5]);
    }

    #[test]
    fn ties_broken_by_index() {
        let p = project_standard_simplex(&[2.0, 2.0, -5.0]);
        assert_eq!(p, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn ball_projection_scales_radially() {
        let set = DecisionSet::ball(vec![1.0, 0.0], 1.0).unwrap();
        let p = set.project(&[4.0, 4.0]).unwrap().point;
        assert_abs_diff_eq!(p[0], 1.0 + 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn feasible_point_is_returned_unchanged() {
        let set = DecisionSet::cube(3, 1.0).unwrap();
        let y = vec![0.25, -0.5, 1.0];
        let p = set.project(&y).unwrap();
        assert_eq!(p.point, y);
        assert_eq!(p.residual, 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let set = DecisionSet::cube(2, 1.0).unwrap();
        assert!(matches!(
            set.project(&[1.0]),
            Err(ColError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn closed_form_diameters() {
        assert_abs_diff_eq!(
            DecisionSet::cube(2, 1.0).unwrap().diameter(),
            2.0 * 2f64.sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(DecisionSet::ball(vec![0.0; 4], 3.0).unwrap().diameter(), 6.0);
        assert_abs_diff_eq!(
            DecisionSet::simplices(1, 2, 0.0).unwrap().diameter(),
            2f64.sqrt(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            DecisionSet::simplices(3, 4, 0.0).unwrap().diameter(),
            6f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn diameter_matches_vertex_enumeration() {
        for set in [
            DecisionSet::simplices(2, 3, 0.1).unwrap(),
            DecisionSet::boxed(vec![-1.0, 0.0, 2.0], vec![0.5, 3.0, 2.5]).unwrap(),
        ] {
            let verts = set.vertices(1 << 12).unwrap();
            let mut best = 0.0f64;
            for a in &verts {
                for b in &verts {
                    best = best.max(vector::distance(a, b));
                }
            }
            assert_abs_diff_eq!(set.diameter(), best, epsilon = 1e-12);
        }
    }

    #[test]
    fn floor_times_block_size_above_one_is_invalid() {
        assert!(DecisionSet::simplices(2, 3, 0.4).is_err());
        assert!(DecisionSet::simplices(2, 2, 0.5).is_ok());
    }

    #[test]
    fn samples_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sets = [
            DecisionSet::cube(3, 2.0).unwrap(),
            DecisionSet::ball(vec![0.5, -0.5], 0.3).unwrap(),
            DecisionSet::simplices(4, 3, 0.05).unwrap(),
        ];
        for set in &sets {
            for _ in 0..200 {
                assert!(set.contains(&set.sample(&mut rng)));
            }
        }
    }
}
