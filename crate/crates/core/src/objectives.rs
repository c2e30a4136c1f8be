//! Objective values and adjoint gradients for the four subproblems.
//!
//! Decision variables are flat vectors. Coefficient problems use the leading
//! coefficients of the current basis order; control problems use the flat
//! interior layout of [`VectorField2::to_interior_flat`]. Gradients are
//! Euclidean gradients in those variables, with the lumped inner product
//! `h^2 * sum` on fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{solve_adjoint_flat, solve_semilinear_flat, FixedPointConfig};
use crate::grid::{dot, Grid, LaplaceOperator, VectorField2};
use crate::nonlinearity::{Coupling, MonomialBasis, NonlinearitySpec};

/// Pointwise bounds `eps_a <= eps(x) <= eps_b` on both components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBox {
    pub eps_a: [f64; 2],
    pub eps_b: [f64; 2],
}

impl Default for ControlBox {
    fn default() -> Self {
        Self {
            eps_a: [-1.0, -1.0],
            eps_b: [1.0, 1.0],
        }
    }
}

impl ControlBox {
    pub fn new(eps_a: [f64; 2], eps_b: [f64; 2]) -> Result<Self> {
        let b = Self { eps_a, eps_b };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for c in 0..2 {
            if !(self.eps_a[c].is_finite() && self.eps_b[c].is_finite()) {
                return Err(Error::invalid("control bounds must be finite"));
            }
            if self.eps_a[c] > self.eps_b[c] {
                return Err(Error::invalid(format!(
                    "eps_a[{c}] = {} exceeds eps_b[{c}] = {}",
                    self.eps_a[c], self.eps_b[c]
                )));
            }
        }
        Ok(())
    }

    /// `max(|eps_a|_inf, |eps_b|_inf)`.
    pub fn eps_max(&self) -> f64 {
        self.eps_a
            .iter()
            .chain(&self.eps_b)
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// Flat lower and upper bound vectors for the interior control layout.
    pub fn flat_bounds(&self, grid: &Grid) -> (Vec<f64>, Vec<f64>) {
        let m = grid.interior_count();
        let expand = |v: [f64; 2]| {
            let mut out = vec![v[0]; m];
            out.extend(std::iter::repeat_n(v[1], m));
            out
        };
        (expand(self.eps_a), expand(self.eps_b))
    }

    /// Whether every interior value lies within the bounds.
    pub fn contains(&self, eps: &VectorField2) -> bool {
        let within = |v: &[f64], c: usize| {
            v.iter()
                .all(|&x| x >= self.eps_a[c] && x <= self.eps_b[c])
        };
        within(&eps.u1.interior(), 0) && within(&eps.u2.interior(), 1)
    }
}

/// Sign of the control-energy term in the splitting objective. `Penalty`
/// minimizes `-misfit + (nu/2)|eps|^2`; `Reward` uses `-(nu/2)|eps|^2`, which
/// corresponds to maximizing misfit plus control energy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerSign {
    #[default]
    Penalty,
    Reward,
}

impl RegularizerSign {
    pub fn factor(self) -> f64 {
        match self {
            RegularizerSign::Penalty => 1.0,
            RegularizerSign::Reward => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Immutable solver state shared by all objective evaluations.
#[derive(Clone, Debug)]
pub struct SolverContext {
    pub op: LaplaceOperator,
    pub coupling: Coupling,
    pub fp: FixedPointConfig,
}

impl SolverContext {
    pub fn new(grid: Grid, coupling: Coupling, fp: FixedPointConfig) -> Result<Self> {
        fp.validate()?;
        Ok(Self {
            op: LaplaceOperator::new(grid)?,
            coupling,
            fp,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.op.grid()
    }

    fn h2(&self) -> f64 {
        self.grid().h() * self.grid().h()
    }

    /// Forward solve that treats non-convergence as a failure.
    pub fn state_flat(&self, spec: &NonlinearitySpec, eps: &[f64]) -> Result<Vec<f64>> {
        let (y, report) = solve_semilinear_flat(&self.op, spec, eps, &self.fp)?;
        if !report.converged {
            return Err(Error::numerical(format!(
                "fixed-point solve stopped after {} iterations at residual {:.3e}",
                report.iterations, report.final_residual
            )));
        }
        Ok(y)
    }

    pub fn state(&self, spec: &NonlinearitySpec, eps: &VectorField2) -> Result<VectorField2> {
        let y = self.state_flat(spec, &eps.to_interior_flat())?;
        VectorField2::from_interior_flat(*self.grid(), &y)
    }

    fn lumped_norm2(&self, v: &[f64]) -> f64 {
        self.h2() * dot(v, v)
    }
}

/// Componentwise clamp of `x` into `[lo, hi]`.
pub fn project_box(x: &[f64], lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    if x.len() != lo.len() || x.len() != hi.len() {
        return Err(Error::invalid(format!(
            "projection lengths differ: x {}, lo {}, hi {}",
            x.len(),
            lo.len(),
            hi.len()
        )));
    }
    Ok(x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&l, &u))| v.max(l).min(u))
        .collect())
}

/// `scale * sum_m |y(coeffs, eps_m) - target_m|^2` and its gradient in the
/// leading `coeffs.len()` coefficients.
fn coefficient_misfit(
    ctx: &SolverContext,
    basis: &MonomialBasis,
    coeffs: &[f64],
    controls: &[VectorField2],
    targets: &[VectorField2],
    scale: f64,
) -> Result<ObjectiveEval> {
    if controls.is_empty() {
        return Err(Error::invalid("at least one control is required"));
    }
    if controls.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} controls but {} targets",
            controls.len(),
            targets.len()
        )));
    }
    let spec = NonlinearitySpec::basis_combo(basis, coeffs, ctx.coupling)?;
    let m = ctx.grid().interior_count();
    let (g1, g2) = (ctx.coupling.gamma1(), ctx.coupling.gamma2());
    let h2 = ctx.h2();
    let mut value = 0.0;
    let mut gradient = vec![0.0; coeffs.len()];
    for (eps, target) in controls.iter().zip(targets) {
        let y = ctx.state_flat(&spec, &eps.to_interior_flat())?;
        let t = target.to_interior_flat();
        let rhs: Vec<f64> = t.iter().zip(&y).map(|(ti, yi)| ti - yi).collect();
        value += scale * ctx.lumped_norm2(&rhs);
        let q = solve_adjoint_flat(&ctx.op, &spec, &y, &rhs)?;
        for (j, gj) in gradient.iter_mut().enumerate() {
            let phi = basis.term(j);
            let mut acc = 0.0;
            for k in 0..m {
                acc += (g1 * q[k] - g2 * q[m + k]) * phi.eval(y[k], y[m + k]);
            }
            *gj += 2.0 * scale * h2 * acc;
        }
    }
    Ok(ObjectiveEval { value, gradient })
}

/// `sum_m 1/2 |y(beta, eps_m) - target_m|^2 + (nu/2) |beta|^2` over the
/// leading `beta.len()` coefficients of `basis`.
pub fn fitting_objective(
    ctx: &SolverContext,
    basis: &MonomialBasis,
    beta: &[f64],
    controls: &[VectorField2],
    targets: &[VectorField2],
    nu: f64,
) -> Result<ObjectiveEval> {
    if beta.is_empty() {
        return Err(Error::invalid("fitting needs at least one active coefficient"));
    }
    let mut eval = coefficient_misfit(ctx, basis, beta, controls, targets, 0.5)?;
    eval.value += 0.5 * nu * dot(beta, beta);
    for (g, b) in eval.gradient.iter_mut().zip(beta) {
        *g += nu * b;
    }
    Ok(eval)
}

/// `sum_m |y(alpha, eps_m) - data_m|^2`, unregularized.
pub fn identification_objective(
    ctx: &SolverContext,
    basis: &MonomialBasis,
    alpha: &[f64],
    controls: &[VectorField2],
    data: &[VectorField2],
) -> Result<ObjectiveEval> {
    coefficient_misfit(ctx, basis, alpha, controls, data, 1.0)
}

/// Misfit between the surrogate and a single candidate element for one control.
pub struct Discrimination {
    /// `1/2 |y_beta - y_candidate|^2`.
    pub misfit: f64,
    pub state_beta: Vec<f64>,
    pub state_candidate: Vec<f64>,
}

/// Forward solves for both models at one control.
pub fn discrimination(
    ctx: &SolverContext,
    basis: &MonomialBasis,
    beta: &[f64],
    candidate: usize,
    eps: &[f64],
) -> Result<Discrimination> {
    if candidate >= basis.len() {
        return Err(Error::invalid(format!(
            "candidate {candidate} outside basis of size {}",
            basis.len()
        )));
    }
    let surrogate = NonlinearitySpec::basis_combo(basis, beta, ctx.coupling)?;
    let single = NonlinearitySpec::single(basis.term(candidate), ctx.coupling);
    let state_beta = ctx.state_flat(&surrogate, eps)?;
    let state_candidate = ctx.state_flat(&single, eps)?;
    let d: Vec<f64> = state_beta
        .iter()
        .zip(&state_candidate)
        .map(|(a, b)| a - b)
        .collect();
    Ok(Discrimination {
        misfit: 0.5 * ctx.lumped_norm2(&d),
        state_beta,
        state_candidate,
    })
}

/// `-1/2 |y_beta - y_candidate|^2 + sign * (nu/2) |eps|^2`, to be minimized
/// over the flat interior control `eps`.
pub fn splitting_objective(
    ctx: &SolverContext,
    basis: &MonomialBasis,
    beta: &[f64],
    candidate: usize,
    eps: &[f64],
    nu: f64,
    sign: RegularizerSign,
) -> Result<ObjectiveEval> {
    let disc = discrimination(ctx, basis, beta, candidate, eps)?;
    let d: Vec<f64> = disc
        .state_beta
        .iter()
        .zip(&disc.state_candidate)
        .map(|(a, b)| a - b)
        .collect();
    let neg_d: Vec<f64> = d.iter().map(|v| -v).collect();
    let surrogate = NonlinearitySpec::basis_combo(basis, beta, ctx.coupling)?;
    let single = NonlinearitySpec::single(basis.term(candidate), ctx.coupling);
    let q_beta = solve_adjoint_flat(&ctx.op, &surrogate, &disc.state_beta, &d)?;
    let q_cand = solve_adjoint_flat(&ctx.op, &single, &disc.state_candidate, &neg_d)?;
    let s = sign.factor();
    let h2 = ctx.h2();
    let gradient = (0..eps.len())
        .map(|k| h2 * (s * nu * eps[k] - (q_beta[k] + q_cand[k])))
        .collect();
    Ok(ObjectiveEval {
        value: -disc.misfit + s * 0.5 * nu * ctx.lumped_norm2(eps),
        gradient,
    })
}

/// The splitting objective with the zero surrogate.
pub fn initialization_objective(
    ctx: &SolverContext,
    basis: &MonomialBasis,
    candidate: usize,
    eps: &[f64],
    nu: f64,
    sign: RegularizerSign,
) -> Result<ObjectiveEval> {
    splitting_objective(ctx, basis, &[], candidate, eps, nu, sign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_differences, relative_errors};
    use crate::nonlinearity::Monomial;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx(n: usize) -> SolverContext {
        let fp = FixedPointConfig {
            tol2: 1e-14,
            ..Default::default()
        };
        SolverContext::new(Grid::new(n, 1.0).unwrap(), Coupling::new(0.2, 0.2).unwrap(), fp)
            .unwrap()
    }

    fn random_control(grid: Grid, rng: &mut ChaCha8Rng) -> VectorField2 {
        let flat: Vec<f64> = (0..2 * grid.interior_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        VectorField2::from_interior_flat(grid, &flat).unwrap()
    }

    fn assert_gradient(
        f: impl Fn(&[f64]) -> f64,
        x: &[f64],
        grad: &[f64],
        coords: &[usize],
        step: f64,
        tol: f64,
    ) {
        let fd = central_differences(&f, x, coords, step);
        let adj: Vec<f64> = coords.iter().map(|&c| grad[c]).collect();
        let errs = relative_errors(&adj, &fd);
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        assert!(worst <= tol, "worst relative error {worst:e}: adj {adj:?} fd {fd:?}");
    }

    #[test]
    fn project_box_examples() {
        let lo = [-1.0, -1.0];
        let hi = [1.0, 1.0];
        assert_eq!(project_box(&[0.5, -0.2], &lo, &hi).unwrap(), vec![0.5, -0.2]);
        assert_eq!(project_box(&[2.0, -2.0], &lo, &hi).unwrap(), vec![1.0, -1.0]);
        assert!(project_box(&[0.0], &lo, &hi).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(x in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let lo = vec![-1.0; 6];
            let hi = vec![0.5; 6];
            let once = project_box(&x, &lo, &hi).unwrap();
            let twice = project_box(&once, &lo, &hi).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.iter().all(|v| (-1.0..=0.5).contains(v)));
        }
    }

    #[test]
    fn control_box_rules() {
        assert!(ControlBox::new([0.0, 0.0], [-1.0, 1.0]).is_err());
        let b = ControlBox::default();
        assert_eq!(b.eps_max(), 1.0);
        let g = Grid::new(4, 1.0).unwrap();
        assert!(b.contains(&VectorField2::constant(g, [1.0, -1.0])));
        assert!(!b.contains(&VectorField2::constant(g, [1.5, 0.0])));
        let (lo, hi) = b.flat_bounds(&g);
        assert_eq!(lo.len(), 18);
        assert!(lo.iter().all(|&v| v == -1.0) && hi.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn fitting_at_generating_coefficients_is_regularizer_only() {
        let c = ctx(8);
        let basis = MonomialBasis::enumerate(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let beta = [0.3, 0.1];
        let spec = NonlinearitySpec::basis_combo(&basis, &beta, c.coupling).unwrap();
        let controls: Vec<_> = (0..2).map(|_| random_control(*c.grid(), &mut rng)).collect();
        let targets: Vec<_> = controls.iter().map(|e| c.state(&spec, e).unwrap()).collect();
        let nu = 1e-3;
        let ev = fitting_objective(&c, &basis, &beta, &controls, &targets, nu).unwrap();
        assert!((ev.value - 0.5 * nu * 0.1).abs() < 1e-15);
    }

    #[test]
    fn fitting_zero_case() {
        let c = ctx(8);
        let basis = MonomialBasis::enumerate(1);
        let g = *c.grid();
        let ev = fitting_objective(
            &c,
            &basis,
            &[0.0],
            &[VectorField2::zeros(g)],
            &[VectorField2::zeros(g)],
            0.0,
        )
        .unwrap();
        assert_eq!(ev.value, 0.0);
        assert!(fitting_objective(&c, &basis, &[0.0], &[], &[], 0.0).is_err());
    }

    #[test]
    fn fitting_gradient_matches_fd() {
        let c = ctx(16);
        let basis = MonomialBasis::enumerate(2);
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let controls: Vec<_> = (0..2).map(|_| random_control(*c.grid(), &mut rng)).collect();
            let cand = NonlinearitySpec::single(basis.term(2 + seed as usize), c.coupling);
            let targets: Vec<_> = controls.iter().map(|e| c.state(&cand, e).unwrap()).collect();
            let beta: Vec<f64> = (0..2).map(|_| rng.random_range(0.1..0.9)).collect();
            let ev = fitting_objective(&c, &basis, &beta, &controls, &targets, 0.0).unwrap();
            let f = |b: &[f64]| {
                fitting_objective(&c, &basis, b, &controls, &targets, 0.0)
                    .unwrap()
                    .value
            };
            assert_gradient(f, &beta, &ev.gradient, &[0, 1], 1e-4, 1e-5);
        }
    }

    #[test]
    fn identification_basics_and_gradient() {
        let c = ctx(16);
        let basis = MonomialBasis::enumerate(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let controls: Vec<_> = (0..3).map(|_| random_control(*c.grid(), &mut rng)).collect();
        let mut star = vec![0.0; 6];
        star[basis.position_of(Monomial::new(1, 1)).unwrap()] = 0.05;
        let spec = NonlinearitySpec::basis_combo(&basis, &star, c.coupling).unwrap();
        let data: Vec<_> = controls.iter().map(|e| c.state(&spec, e).unwrap()).collect();
        let at_star = identification_objective(&c, &basis, &star, &controls, &data).unwrap();
        assert!(at_star.value <= 1e-18);

        let alpha: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..0.5)).collect();
        let ev = identification_objective(&c, &basis, &alpha, &controls, &data).unwrap();
        assert!(ev.value > 0.0);
        let f = |a: &[f64]| {
            identification_objective(&c, &basis, a, &controls, &data)
                .unwrap()
                .value
        };
        assert_gradient(f, &alpha, &ev.gradient, &[0, 1, 2, 3, 4, 5], 1e-4, 1e-5);
    }

    #[test]
    fn splitting_zero_control() {
        let c = ctx(8);
        let basis = MonomialBasis::enumerate(2);
        let eps = vec![0.0; 2 * c.grid().interior_count()];
        // no constant term, so g(0) = 0 for both models
        let ev = splitting_objective(&c, &basis, &[0.0, 0.1, 0.3], 3, &eps, 1e-3, RegularizerSign::Penalty)
            .unwrap();
        assert_eq!(ev.value, 0.0);
        assert!(ev.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn splitting_identical_models_leave_regularizer() {
        let c = ctx(8);
        let basis = MonomialBasis::enumerate(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = random_control(*c.grid(), &mut rng).to_interior_flat();
        // beta = e_1 and candidate 0 describe the same nonlinearity
        let nu = 1e-2;
        let ev = splitting_objective(&c, &basis, &[1.0], 0, &eps, nu, RegularizerSign::Penalty)
            .unwrap();
        let reg = 0.5 * nu * c.lumped_norm2(&eps);
        assert!((ev.value - reg).abs() < 1e-15);
    }

    #[test]
    fn splitting_gradient_matches_fd() {
        let c = ctx(16);
        let basis = MonomialBasis::enumerate(2);
        let n = 2 * c.grid().interior_count();
        for (seed, sign) in [(0, RegularizerSign::Penalty), (1, RegularizerSign::Reward)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eps = random_control(*c.grid(), &mut rng).to_interior_flat();
            let beta = [0.4, 0.7, 0.2];
            let nu = 1e-3;
            let ev = splitting_objective(&c, &basis, &beta, 4, &eps, nu, sign).unwrap();
            let coords: Vec<usize> = (0..20).map(|_| rng.random_range(0..n)).collect();
            let f = |e: &[f64]| {
                splitting_objective(&c, &basis, &beta, 4, e, nu, sign)
                    .unwrap()
                    .value
            };
            assert_gradient(f, &eps, &ev.gradient, &coords, 1e-3, 1e-5);
        }
    }

    #[test]
    fn initialization_constant_candidate_matches_two_solves() {
        let c = ctx(16);
        let basis = MonomialBasis::enumerate(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eps_field = random_control(*c.grid(), &mut rng);
        let eps = eps_field.to_interior_flat();
        let ev = initialization_objective(&c, &basis, 0, &eps, 0.0, RegularizerSign::Penalty).unwrap();
        // y0 - y1 = L^{-1}(gamma1, -gamma2) regardless of eps
        let g = *c.grid();
        let forcing = VectorField2::constant(g, [0.2, -0.2]);
        let w = VectorField2 {
            u1: c.op.solve(&forcing.u1).unwrap(),
            u2: c.op.solve(&forcing.u2).unwrap(),
        };
        let expected = -0.5 * w.inner(&w);
        assert!((ev.value - expected).abs() <= 1e-13 * expected.abs());

        let coords: Vec<usize> = (0..20).map(|_| rng.random_range(0..eps.len())).collect();
        let ev = initialization_objective(&c, &basis, 3, &eps, 1e-4, RegularizerSign::Penalty)
            .unwrap();
        let f = |e: &[f64]| {
            initialization_objective(&c, &basis, 3, e, 1e-4, RegularizerSign::Penalty)
                .unwrap()
                .value
        };
        assert_gradient(f, &eps, &ev.gradient, &coords, 1e-3, 1e-5);
    }

    #[test]
    fn splitting_without_regularizer_is_nonpositive() {
        let c = ctx(8);
        let basis = MonomialBasis::enumerate(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let eps = random_control(*c.grid(), &mut rng).to_interior_flat();
            let cand = rng.random_range(0..6);
            let beta: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let ev = splitting_objective(&c, &basis, &beta, cand, &eps, 0.0, RegularizerSign::Penalty)
                .unwrap();
            assert!(ev.value <= 0.0);
        }
    }
}
