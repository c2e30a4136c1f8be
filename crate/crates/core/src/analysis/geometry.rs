use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::VectorField2;
use crate::nonlinearity::{eval_combination, MonomialBasis, NonlinearitySpec};

/// Smallest side used for a square around a degenerate point cloud.
const MIN_SIDE: f64 = 1e-6;

/// State-value pairs traced by one control over all nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSet {
    pub control_index: usize,
    pub points: Vec<[f64; 2]>,
}

/// Axis-aligned square in the state plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Square {
    pub center: [f64; 2],
    pub side: f64,
}

impl Square {
    pub fn new(center: [f64; 2], side: f64) -> Result<Self> {
        if !(side.is_finite() && side > 0.0 && center.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!(
                "square needs a finite center and positive side, got {center:?} and {side}"
            )));
        }
        Ok(Self { center, side })
    }

    /// Smallest enclosing square: bounding-box center, longer bounding-box side.
    pub fn enclosing<'a>(points: impl IntoIterator<Item = &'a [f64; 2]>) -> Result<Self> {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        if lo[0] > hi[0] {
            return Err(Error::invalid("cannot enclose an empty point set"));
        }
        let side = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(MIN_SIDE);
        Self::new([(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0], side)
    }

    /// Coordinate of lattice line `i` of `m` along axis `d`.
    pub fn lattice_coord(&self, d: usize, i: usize, m: usize) -> f64 {
        self.center[d] - self.side / 2.0 + self.side * i as f64 / (m - 1) as f64
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let r = self.side / 2.0;
        (0..2).all(|d| (p[d] - self.center[d]).abs() <= r)
    }
}

/// Point clouds of each state plus the square enclosing their union.
pub fn solution_sets(states: &[VectorField2]) -> Result<(Vec<SolutionSet>, Square)> {
    if states.is_empty() {
        return Err(Error::invalid("solution sets need at least one state"));
    }
    let sets: Vec<SolutionSet> = states
        .iter()
        .enumerate()
        .map(|(m, y)| SolutionSet {
            control_index: m,
            points: y.point_pairs().map(|(a, b)| [a, b]).collect(),
        })
        .collect();
    let square = Square::enclosing(sets.iter().flat_map(|s| s.points.iter()))?;
    Ok((sets, square))
}

/// `G_true(y) - sum_j alpha_j phi_j(y)` at one point.
pub fn pointwise_error(
    truth: &NonlinearitySpec,
    basis: &MonomialBasis,
    alpha: &[f64],
    y: [f64; 2],
) -> f64 {
    truth.eval_scalar(y[0], y[1]) - eval_combination(basis, alpha, y[0], y[1])
}

/// Reconstruction error sampled on an `m x m` lattice. `samples[i][j]` sits at
/// `(lattice_coord(0, i), lattice_coord(1, j))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorField {
    pub square: Square,
    pub m: usize,
    pub samples: Vec<Vec<f64>>,
}

impl ErrorField {
    pub fn axis(&self, d: usize) -> Vec<f64> {
        (0..self.m).map(|i| self.square.lattice_coord(d, i, self.m)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples
            .iter()
            .flatten()
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

pub fn error_field(
    truth: &NonlinearitySpec,
    alpha: &[f64],
    basis: &MonomialBasis,
    square: &Square,
    m: usize,
) -> Result<ErrorField> {
    if m < 2 {
        return Err(Error::invalid(format!("error lattice needs M >= 2, got {m}")));
    }
    let samples = (0..m)
        .map(|i| {
            let y1 = square.lattice_coord(0, i, m);
            (0..m)
                .map(|j| pointwise_error(truth, basis, alpha, [y1, square.lattice_coord(1, j, m)]))
                .collect()
        })
        .collect();
    Ok(ErrorField {
        square: *square,
        m,
        samples,
    })
}

/// `max |e|` over every point of every solution set.
pub fn max_abs_error_on_points(
    truth: &NonlinearitySpec,
    alpha: &[f64],
    basis: &MonomialBasis,
    sets: &[SolutionSet],
) -> f64 {
    sets.iter()
        .flat_map(|s| s.points.iter())
        .fold(0.0, |acc, p| acc.max(pointwise_error(truth, basis, alpha, *p).abs()))
}

/// Ratio of the second to the first singular value of the centered point
/// cloud. Zero for a cloud collapsed to a single point.
pub fn collinearity<'a>(points: impl IntoIterator<Item = &'a [f64; 2]>) -> f64 {
    let pts: Vec<[f64; 2]> = points.into_iter().copied().collect();
    if pts.is_empty() {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mean = [
        pts.iter().map(|p| p[0]).sum::<f64>() / n,
        pts.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for p in &pts {
        let (u, v) = (p[0] - mean[0], p[1] - mean[1]);
        a += u * u;
        b += u * v;
        c += v * v;
    }
    let (hi, lo) = sym_eigenvalues(a, b, c);
    if hi <= 0.0 {
        return 0.0;
    }
    (lo.max(0.0) / hi).sqrt()
}

/// Eigenvalues `(larger, smaller)` of `[[a, b], [b, c]]`.
pub(crate) fn sym_eigenvalues(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = (a + c) / 2.0;
    let r = ((a - c) / 2.0).hypot(b);
    let hi = mean + r;
    // The product form avoids cancellation when one eigenvalue is tiny.
    let det = a * c - b * b;
    let lo = if hi != 0.0 { det / hi } else { mean - r };
    (hi, lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, ScalarField};
    use crate::nonlinearity::{ClosedForm, Coupling, Monomial};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn coupling() -> Coupling {
        Coupling::new(0.2, 0.2).unwrap()
    }

    #[test]
    fn zero_state_square_is_widened() {
        let g = Grid::new(4, 1.0).unwrap();
        let (sets, sq) = solution_sets(&[VectorField2::zeros(g)]).unwrap();
        assert_eq!(sets[0].points.len(), 25);
        assert!(sets[0].points.iter().all(|p| *p == [0.0, 0.0]));
        assert_eq!(sq.center, [0.0, 0.0]);
        assert_eq!(sq.side, 1e-6);
        assert!(solution_sets(&[]).is_err());
    }

    #[test]
    fn enclosing_square_of_two_points() {
        let sq = Square::enclosing(&[[0.0, 0.0], [1.0, -2.0]]).unwrap();
        assert_eq!(sq.center, [0.5, -1.0]);
        assert_eq!(sq.side, 2.0);
    }

    #[test]
    fn scaled_profile_is_collinear() {
        let g = Grid::new(16, 1.0).unwrap();
        let kappa = |a: f64, b: f64| ((a + 1.0) * PI / 2.0).sin() * ((b + 1.0) * PI / 2.0).sin();
        let (eta, theta) = (0.5, 1.0);
        let y = VectorField2 {
            u1: ScalarField::from_fn(g, |a, b| eta * kappa(a, b)),
            u2: ScalarField::from_fn(g, |a, b| -theta * kappa(a, b)),
        };
        let (sets, _) = solution_sets(&[y]).unwrap();
        assert!(collinearity(&sets[0].points) <= 1e-12);
        for p in &sets[0].points {
            assert!((p[1] * eta + p[0] * theta).abs() < 1e-15);
        }
    }

    #[test]
    fn collinearity_of_isotropic_cloud_is_one() {
        let pts = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        assert!((collinearity(&pts) - 1.0).abs() < 1e-15);
        assert_eq!(collinearity(&[[2.0, 3.0]; 5]), 0.0);
    }

    #[test]
    fn error_field_trivial_cases() {
        let basis = MonomialBasis::enumerate(2);
        let pos = basis.position_of(Monomial::new(1, 1)).unwrap();
        let mut alpha = vec![0.0; basis.len()];
        alpha[pos] = 0.05;
        let truth = NonlinearitySpec::closed_form(ClosedForm::Bilinear, coupling());
        let sq = Square::new([0.1, -0.2], 1.5).unwrap();
        let exact = error_field(&truth, &alpha, &basis, &sq, 11).unwrap();
        assert!(exact.samples.iter().flatten().all(|v| v.abs() < 1e-16));
        let zero = error_field(&truth, &vec![0.0; basis.len()], &basis, &sq, 11).unwrap();
        let (a1, a2) = (zero.axis(0), zero.axis(1));
        for (row, x) in zero.samples.iter().zip(&a1) {
            for (v, y) in row.iter().zip(&a2) {
                assert_eq!(*v, 0.05 * x * y);
            }
        }
        assert!(error_field(&truth, &alpha, &basis, &sq, 1).is_err());
    }

    #[test]
    fn lattice_values_match_pointwise_error_on_set() {
        let g = Grid::new(4, 1.0).unwrap();
        let y = VectorField2::constant(g, [0.0, 0.0]);
        let (sets, _) = solution_sets(&[y]).unwrap();
        let sq = Square::new([0.0, 0.0], 2.0).unwrap();
        let basis = MonomialBasis::enumerate(1);
        let alpha = [0.01, 0.2, 0.3];
        let truth = NonlinearitySpec::closed_form(ClosedForm::Exponential, coupling());
        let f = error_field(&truth, &alpha, &basis, &sq, 5).unwrap();
        assert_eq!(f.axis(0)[2], 0.0);
        assert_eq!(f.samples[2][2], pointwise_error(&truth, &basis, &alpha, sets[0].points[0]));
    }

    proptest! {
        #[test]
        fn on_set_max_bounded_by_square_max(
            a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64, amp in 0.1..1.0f64,
        ) {
            // Bilinear error with affine coefficients: extremes sit on the
            // square's corners, which are lattice nodes.
            let g = Grid::new(8, 1.0).unwrap();
            let y = VectorField2 {
                u1: ScalarField::from_fn(g, |x1, x2| amp * x1 * x2),
                u2: ScalarField::from_fn(g, |x1, _| amp * x1),
            };
            let (sets, sq) = solution_sets(&[y]).unwrap();
            let basis = MonomialBasis::from_terms(vec![
                Monomial::new(0, 0), Monomial::new(1, 0), Monomial::new(0, 1),
            ]).unwrap();
            let alpha = [a, b, c];
            let truth = NonlinearitySpec::closed_form(ClosedForm::Bilinear, coupling());
            let f = error_field(&truth, &alpha, &basis, &sq, 21).unwrap();
            let on = max_abs_error_on_points(&truth, &alpha, &basis, &sets);
            prop_assert!(on <= f.max_abs() * (1.0 + 1e-12));
            prop_assert!(sets[0].points.iter().all(|p| sq.contains(*p)));
        }
    }
}
