use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{solve_semilinear, SolveReport};
use crate::grid::VectorField2;
use crate::nonlinearity::{CoeffVector, MonomialBasis, NonlinearitySpec};
use crate::objectives::{identification_objective, SolverContext};
use crate::optimizer::{minimize_box, OptimConfig};

/// Noiseless observations: one forward solve with the true nonlinearity per
/// control. Reports are returned so callers can flag unconverged solves.
pub fn generate_data(
    ctx: &SolverContext,
    truth: &NonlinearitySpec,
    controls: &[VectorField2],
) -> Result<(Vec<VectorField2>, Vec<SolveReport>)> {
    let mut data = Vec::with_capacity(controls.len());
    let mut reports = Vec::with_capacity(controls.len());
    for eps in controls {
        let (y, report) = solve_semilinear(&ctx.op, truth, eps, &ctx.fp)?;
        data.push(y);
        reports.push(report);
    }
    Ok((data, reports))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyConfig {
    pub alpha_max: f64,
    pub optim: OptimConfig,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            alpha_max: 1.0,
            optim: OptimConfig {
                max_iters: 1000,
                grad_tol: 1e-13,
                restarts: 2,
                ..OptimConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub alpha: CoeffVector,
    pub value: f64,
    pub value_at_zero: f64,
    pub projected_grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
}

/// Minimizes the identification objective over `[0, alpha_max]^K` from the
/// zero coefficient vector plus seeded random restarts.
pub fn identify(
    ctx: &SolverContext,
    controls: &[VectorField2],
    data: &[VectorField2],
    basis: &MonomialBasis,
    cfg: &IdentifyConfig,
) -> Result<Identification> {
    if controls.is_empty() || controls.len() != data.len() {
        return Err(Error::invalid(format!(
            "identification needs matching nonempty controls and data, got {} and {}",
            controls.len(),
            data.len()
        )));
    }
    let k = basis.len();
    let lo = vec![0.0; k];
    let hi = vec![cfg.alpha_max; k];
    let f = |a: &[f64]| {
        identification_objective(ctx, basis, a, controls, data).map(|e| (e.value, e.gradient))
    };
    let value_at_zero = f(&lo)?.0;
    let r = minimize_box(f, &lo, &lo, &hi, &cfg.optim)?;
    Ok(Identification {
        alpha: CoeffVector::new(r.x, cfg.alpha_max)?,
        value: r.value,
        value_at_zero,
        projected_grad_norm: r.projected_grad_norm,
        iterations: r.iterations,
        converged: r.converged,
        line_search_failed: r.line_search_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::FixedPointConfig;
    use crate::grid::Grid;
    use crate::nonlinearity::{ClosedForm, Coupling, Monomial};

    fn ctx(n: usize) -> SolverContext {
        let fp = FixedPointConfig {
            tol2: 1e-13,
            ..Default::default()
        };
        SolverContext::new(Grid::new(n, 1.0).unwrap(), Coupling::new(0.2, 0.2).unwrap(), fp).unwrap()
    }

    #[test]
    fn data_trivial_cases() {
        let c = ctx(8);
        let g = *c.grid();
        let zero = NonlinearitySpec::zero(c.coupling);
        let eps = VectorField2::constant(g, [0.5, -1.0]);
        let (d, reports) = generate_data(&c, &zero, std::slice::from_ref(&eps)).unwrap();
        assert!(reports[0].converged);
        assert_eq!(d[0].u1, c.op.solve(&eps.u1).unwrap());
        let bil = NonlinearitySpec::closed_form(ClosedForm::Bilinear, c.coupling);
        let (d, _) = generate_data(&c, &bil, &[VectorField2::zeros(g)]).unwrap();
        assert!(d[0].point_pairs().all(|(a, b)| a == 0.0 && b == 0.0));
    }

    #[test]
    fn bilinear_representations_agree() {
        let c = ctx(16);
        let g = *c.grid();
        let basis = MonomialBasis::enumerate(2);
        let mut alpha = vec![0.0; 6];
        alpha[basis.position_of(Monomial::new(1, 1)).unwrap()] = 0.05;
        let combo = NonlinearitySpec::basis_combo(&basis, &alpha, c.coupling).unwrap();
        let closed = NonlinearitySpec::closed_form(ClosedForm::Bilinear, c.coupling);
        let controls = vec![
            VectorField2::constant(g, [1.0, 1.0]),
            VectorField2::constant(g, [-1.0, 0.5]),
        ];
        let (a, _) = generate_data(&c, &combo, &controls).unwrap();
        let (b, _) = generate_data(&c, &closed, &controls).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let d = x.sub(y);
            assert!(d.inner(&d).sqrt() < 1e-14);
        }
    }

    #[test]
    fn constant_truth_matches_grid_search() {
        let c = ctx(8);
        let g = *c.grid();
        let basis = MonomialBasis::enumerate(0);
        let truth = NonlinearitySpec::basis_combo(&basis, &[0.37], c.coupling).unwrap();
        let controls = vec![VectorField2::constant(g, [0.3, 0.3])];
        let (data, _) = generate_data(&c, &truth, &controls).unwrap();
        let id = identify(&c, &controls, &data, &basis, &IdentifyConfig::default()).unwrap();
        let mut best = (0.0, f64::INFINITY);
        for i in 0..=100 {
            let a = i as f64 / 100.0;
            let v = identification_objective(&c, &basis, &[a], &controls, &data)
                .unwrap()
                .value;
            if v < best.1 {
                best = (a, v);
            }
        }
        assert!((id.alpha.values()[0] - best.0).abs() <= 0.01);
        assert!(id.value <= best.1);
    }

    #[test]
    fn zero_data_gives_zero_coefficients() {
        let c = ctx(8);
        let g = *c.grid();
        let basis = MonomialBasis::from_terms(vec![Monomial::new(1, 0), Monomial::new(1, 1)]).unwrap();
        let controls = vec![VectorField2::zeros(g)];
        let data = vec![VectorField2::zeros(g)];
        let id = identify(&c, &controls, &data, &basis, &IdentifyConfig::default()).unwrap();
        assert_eq!(id.value, 0.0);
        assert_eq!(id.alpha.values(), &[0.0, 0.0]);
    }

    #[test]
    fn in_span_recovery_with_rich_controls() {
        let c = ctx(16);
        let g = *c.grid();
        let basis = MonomialBasis::enumerate(1);
        let star = [0.1, 0.3, 0.05];
        let truth = NonlinearitySpec::basis_combo(&basis, &star, c.coupling).unwrap();
        let controls = vec![
            VectorField2::constant(g, [1.0, -1.0]),
            VectorField2::constant(g, [1.0, 1.0]),
            VectorField2::constant(g, [-1.0, 0.2]),
        ];
        let (data, _) = generate_data(&c, &truth, &controls).unwrap();
        let id = identify(&c, &controls, &data, &basis, &IdentifyConfig::default()).unwrap();
        assert!(id.value <= 1e-12 && id.value <= id.value_at_zero);
        for (a, b) in id.alpha.values().iter().zip(&star) {
            assert!((a - b).abs() < 1e-4, "{:?}", id.alpha.values());
        }
        assert!(identify(&c, &[], &[], &basis, &IdentifyConfig::default()).is_err());
    }
}
