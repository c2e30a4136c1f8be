use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField2};
use crate::objectives::ControlBox;

fn kappa(x1: f64, x2: f64) -> f64 {
    ((x1 + 1.0) * PI / 2.0).sin() * ((x2 + 1.0) * PI / 2.0).sin()
}

/// Right-hand side whose solution under `G = 0.05 y1 y2` is
/// `(eta * kappa, -theta * kappa)` on `(-1, 1)^2`.
pub fn constructed_control(eta: f64, theta: f64, gamma1: f64, gamma2: f64, grid: Grid) -> VectorField2 {
    let c = PI * PI / 2.0;
    VectorField2 {
        u1: ScalarField::from_fn(grid, |a, b| {
            let k = kappa(a, b);
            eta * c * k - 0.05 * gamma1 * eta * theta * k * k
        }),
        u2: ScalarField::from_fn(grid, |a, b| {
            let k = kappa(a, b);
            -theta * c * k + 0.05 * gamma2 * eta * theta * k * k
        }),
    }
}

/// How the constant pair of a random control is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstantControlMode {
    /// One scalar `c` from the common range, control `(c, c)`.
    #[default]
    Diagonal,
    /// Each component drawn independently from its own range.
    Independent,
}

/// Spatially constant controls drawn uniformly from the box.
pub fn random_constant_controls(
    count: usize,
    bounds: &ControlBox,
    seed: u64,
    mode: ConstantControlMode,
    grid: Grid,
) -> Result<Vec<VectorField2>> {
    if count == 0 {
        return Err(Error::invalid("count must be >= 1"));
    }
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        if lo < hi {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    let lo = bounds.eps_a[0].max(bounds.eps_a[1]);
    let hi = bounds.eps_b[0].min(bounds.eps_b[1]);
    if mode == ConstantControlMode::Diagonal && lo > hi {
        return Err(Error::invalid(
            "component ranges of the box do not overlap; diagonal controls are impossible",
        ));
    }
    Ok((0..count)
        .map(|_| {
            let pair = match mode {
                ConstantControlMode::Diagonal => {
                    let c = uniform(&mut rng, lo, hi);
                    [c, c]
                }
                ConstantControlMode::Independent => [
                    uniform(&mut rng, bounds.eps_a[0], bounds.eps_b[0]),
                    uniform(&mut rng, bounds.eps_a[1], bounds.eps_b[1]),
                ],
            };
            VectorField2::constant(grid, pair)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{solve_semilinear, FixedPointConfig};
    use crate::grid::LaplaceOperator;
    use crate::nonlinearity::{ClosedForm, Coupling, NonlinearitySpec};

    #[test]
    fn degenerate_parameters_give_zero() {
        let g = Grid::new(8, 1.0).unwrap();
        let c = constructed_control(0.0, 0.0, 0.2, 0.2, g);
        assert!(c.point_pairs().all(|(a, b)| a == 0.0 && b == 0.0));
    }

    #[test]
    fn center_value() {
        let g = Grid::new(8, 1.0).unwrap();
        let (eta, theta, g1, g2) = (0.5, 1.0, 0.3, 0.2);
        let c = constructed_control(eta, theta, g1, g2, g);
        let want1 = eta * PI * PI / 2.0 - 0.05 * g1 * eta * theta;
        let want2 = -theta * PI * PI / 2.0 + 0.05 * g2 * eta * theta;
        assert!((c.u1.get(4, 4) - want1).abs() < 1e-14);
        assert!((c.u2.get(4, 4) - want2).abs() < 1e-14);
    }

    #[test]
    fn manufactured_solution_converges() {
        let err = |n: usize| {
            let g = Grid::new(n, 1.0).unwrap();
            let op = LaplaceOperator::new(g).unwrap();
            let spec = NonlinearitySpec::closed_form(ClosedForm::Bilinear, Coupling::new(0.2, 0.2).unwrap());
            let eps = constructed_control(-0.7, 0.4, 0.2, 0.2, g);
            let (y, _) = solve_semilinear(&op, &spec, &eps, &FixedPointConfig::default()).unwrap();
            let exact = VectorField2 {
                u1: ScalarField::from_fn(g, |a, b| -0.7 * kappa(a, b)),
                u2: ScalarField::from_fn(g, |a, b| -0.4 * kappa(a, b)),
            };
            let d = y.sub(&exact);
            d.inner(&d).sqrt()
        };
        let ratio = err(16) / err(32);
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn random_controls_are_reproducible_and_feasible() {
        let g = Grid::new(4, 1.0).unwrap();
        let b = ControlBox::new([-1.0, -0.5], [1.0, 0.8]).unwrap();
        for mode in [ConstantControlMode::Diagonal, ConstantControlMode::Independent] {
            let a = random_constant_controls(19, &b, 3, mode, g).unwrap();
            let c = random_constant_controls(19, &b, 3, mode, g).unwrap();
            assert_eq!(a, c);
            assert!(a.iter().all(|e| b.contains(e)));
        }
        let diag = random_constant_controls(5, &b, 1, ConstantControlMode::Diagonal, g).unwrap();
        for e in &diag {
            assert_eq!(e.u1.get(1, 1), e.u2.get(1, 1));
        }
        assert!(random_constant_controls(0, &b, 1, ConstantControlMode::Diagonal, g).is_err());
    }
}
