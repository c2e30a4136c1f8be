//! Relaxed fixed-point solver for `-Delta y + g(y) = eps` and the linearized
//! adjoint solve `(-Delta + g'(y)^T) q = r`.
//!
//! Both solvers work on flat interior vectors: the `u1` interior block first,
//! then the `u2` block, as produced by [`VectorField2::to_interior_flat`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot, LaplaceOperator, VectorField2};
use crate::nonlinearity::NonlinearitySpec;

const GMRES_RESTART: usize = 40;
const GMRES_MAX_CYCLES: usize = 25;
const GMRES_TOL: f64 = 1e-13;
const ADJOINT_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPointConfig {
    pub lambda_a: f64,
    pub tol2: f64,
    pub ell_max: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            lambda_a: 0.0,
            tol2: 1e-10,
            ell_max: 200,
        }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        self.problems().map_or(Ok(()), |p| Err(Error::invalid(p.join("; "))))
    }

    /// Every violated constraint, or `None`.
    pub(crate) fn problems(&self) -> Option<Vec<String>> {
        let mut out = Vec::new();
        if !(0.0..1.0).contains(&self.lambda_a) {
            out.push(format!("lambda_a must lie in [0, 1), got {}", self.lambda_a));
        }
        if !(self.tol2 > 0.0) {
            out.push(format!("tol2 must be > 0, got {}", self.tol2));
        }
        if self.ell_max < 1 {
            out.push("ell_max must be >= 1".to_string());
        }
        (!out.is_empty()).then_some(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
}

/// Applies `g` at interior nodes of a flat state.
pub(crate) fn eval_g_flat(spec: &NonlinearitySpec, y: &[f64], out: &mut [f64]) -> Result<()> {
    let m = y.len() / 2;
    let (g1, g2) = (spec.coupling().gamma1(), spec.coupling().gamma2());
    for k in 0..m {
        let v = spec.eval_scalar(y[k], y[m + k]);
        if !v.is_finite() {
            return Err(Error::numerical(format!(
                "nonlinearity is not finite at interior node {k} (y = ({}, {}))",
                y[k],
                y[m + k]
            )));
        }
        out[k] = g1 * v;
        out[m + k] = -g2 * v;
    }
    Ok(())
}

fn solve_components(op: &LaplaceOperator, rhs: &[f64]) -> Result<Vec<f64>> {
    let m = rhs.len() / 2;
    let mut out = op.solve_interior(&rhs[..m])?;
    out.extend(op.solve_interior(&rhs[m..])?);
    Ok(out)
}

/// Fixed-point iteration on flat interior vectors.
pub fn solve_semilinear_flat(
    op: &LaplaceOperator,
    spec: &NonlinearitySpec,
    eps: &[f64],
    cfg: &FixedPointConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    let m = op.grid().interior_count();
    if eps.len() != 2 * m {
        return Err(Error::invalid(format!(
            "control has {} interior values, expected {}",
            eps.len(),
            2 * m
        )));
    }
    cfg.validate()?;
    let h = op.grid().h();
    let mut y = solve_components(op, eps)?;
    let mut g = vec![0.0; 2 * m];
    let mut rhs = vec![0.0; 2 * m];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while residual > cfg.tol2 && iterations < cfg.ell_max {
        eval_g_flat(spec, &y, &mut g)?;
        for k in 0..2 * m {
            rhs[k] = eps[k] - g[k];
        }
        let tilde = solve_components(op, &rhs)?;
        let mut diff2 = 0.0;
        for k in 0..2 * m {
            let next = cfg.lambda_a * y[k] + (1.0 - cfg.lambda_a) * tilde[k];
            if !next.is_finite() {
                return Err(Error::numerical(format!(
                    "fixed-point iterate diverged at iteration {} (interior node {})",
                    iterations + 1,
                    k % m
                )));
            }
            diff2 += (next - y[k]) * (next - y[k]);
            y[k] = next;
        }
        residual = h * diff2.sqrt();
        iterations += 1;
    }
    Ok((
        y,
        SolveReport {
            iterations,
            final_residual: residual,
            converged: residual <= cfg.tol2,
        },
    ))
}

/// Solves `-Delta y + g(y) = eps` with homogeneous Dirichlet conditions.
///
/// A run that hits `ell_max` is returned with `converged = false`.
pub fn solve_semilinear(
    op: &LaplaceOperator,
    spec: &NonlinearitySpec,
    eps: &VectorField2,
    cfg: &FixedPointConfig,
) -> Result<(VectorField2, SolveReport)> {
    if eps.grid() != op.grid() {
        return Err(Error::invalid("control lives on a different grid"));
    }
    let (y, report) = solve_semilinear_flat(op, spec, &eps.to_interior_flat(), cfg)?;
    Ok((VectorField2::from_interior_flat(*op.grid(), &y)?, report))
}

/// Pointwise `J^T` data: `(J^T q)_1 = d1 * (g1 q1 - g2 q2)`,
/// `(J^T q)_2 = d2 * (g1 q1 - g2 q2)`.
struct AdjointCoupling {
    d1: Vec<f64>,
    d2: Vec<f64>,
    gamma1: f64,
    gamma2: f64,
}

impl AdjointCoupling {
    fn new(spec: &NonlinearitySpec, state: &[f64]) -> Result<Self> {
        let m = state.len() / 2;
        let mut d1 = vec![0.0; m];
        let mut d2 = vec![0.0; m];
        for k in 0..m {
            let (_, a, b) = spec.scalar_with_grad(state[k], state[m + k]);
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::numerical(format!(
                    "Jacobian is not finite at interior node {k}"
                )));
            }
            d1[k] = a;
            d2[k] = b;
        }
        Ok(Self {
            d1,
            d2,
            gamma1: spec.coupling().gamma1(),
            gamma2: spec.coupling().gamma2(),
        })
    }

    fn is_zero(&self) -> bool {
        self.d1.iter().chain(&self.d2).all(|&v| v == 0.0)
    }

    fn apply(&self, q: &[f64], out: &mut [f64]) {
        let m = self.d1.len();
        for k in 0..m {
            let s = self.gamma1 * q[k] - self.gamma2 * q[m + k];
            out[k] = self.d1[k] * s;
            out[m + k] = self.d2[k] * s;
        }
    }
}

/// Adjoint solve on flat interior vectors.
pub fn solve_adjoint_flat(
    op: &LaplaceOperator,
    spec: &NonlinearitySpec,
    state: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let m = op.grid().interior_count();
    if state.len() != 2 * m || rhs.len() != 2 * m {
        return Err(Error::invalid("adjoint inputs have the wrong length"));
    }
    let rhs_norm = dot(rhs, rhs).sqrt();
    if rhs_norm == 0.0 {
        return Ok(vec![0.0; 2 * m]);
    }
    let coupling = AdjointCoupling::new(spec, state)?;
    let b = solve_components(op, rhs)?;
    if coupling.is_zero() {
        return Ok(b);
    }

    // Left-preconditioned system (I + L^{-1} J^T) q = L^{-1} r.
    let mut scratch = vec![0.0; 2 * m];
    let apply = |v: &[f64], scratch: &mut [f64]| -> Result<Vec<f64>> {
        coupling.apply(v, scratch);
        let mut w = solve_components(op, scratch)?;
        for (wi, vi) in w.iter_mut().zip(v) {
            *wi += vi;
        }
        Ok(w)
    };
    let q = gmres(&b, |v| apply(v, &mut scratch))?;

    // Check the unpreconditioned residual.
    let mut lq = vec![0.0; 2 * m];
    op.apply_interior(&q[..m], &mut lq[..m]);
    op.apply_interior(&q[m..], &mut lq[m..]);
    let mut jq = vec![0.0; 2 * m];
    coupling.apply(&q, &mut jq);
    let res: f64 = (0..2 * m)
        .map(|k| {
            let r = lq[k] + jq[k] - rhs[k];
            r * r
        })
        .sum::<f64>()
        .sqrt();
    if !(res <= ADJOINT_RESIDUAL_TOL * rhs_norm) {
        let worst = (0..m)
            .max_by(|&a, &b| {
                let sa = coupling.d1[a].abs() + coupling.d2[a].abs();
                let sb = coupling.d1[b].abs() + coupling.d2[b].abs();
                sa.total_cmp(&sb)
            })
            .unwrap_or(0);
        return Err(Error::numerical(format!(
            "adjoint system residual {:.3e} exceeds tolerance; largest coupling at interior node {worst}",
            res / rhs_norm
        )));
    }
    Ok(q)
}

/// Solves `(-Delta + J^T(state)) q = rhs`, `J` the Jacobian of `g`.
pub fn solve_adjoint(
    op: &LaplaceOperator,
    spec: &NonlinearitySpec,
    state: &VectorField2,
    rhs: &VectorField2,
) -> Result<VectorField2> {
    if state.grid() != op.grid() || rhs.grid() != op.grid() {
        return Err(Error::invalid("adjoint inputs live on a different grid"));
    }
    let q = solve_adjoint_flat(op, spec, &state.to_interior_flat(), &rhs.to_interior_flat())?;
    VectorField2::from_interior_flat(*op.grid(), &q)
}

/// Restarted GMRES with modified Gram-Schmidt and Givens rotations,
/// starting from zero.
fn gmres(b: &[f64], mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let target = GMRES_TOL * b_norm;
    let mut r = b.to_vec();
    for _ in 0..GMRES_MAX_CYCLES {
        let beta = dot(&r, &r).sqrt();
        if beta <= target {
            return Ok(x);
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        for j in 0..GMRES_RESTART {
            let mut w = apply(&basis[j])?;
            let mut col = vec![0.0; j + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                col[i] = hij;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= hij * vk;
                }
            }
            let wn = dot(&w, &w).sqrt();
            col[j + 1] = wn;
            for i in 0..j {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let denom = col[j].hypot(col[j + 1]);
            if denom == 0.0 || !denom.is_finite() {
                return Err(Error::numerical("GMRES breakdown in adjoint solve"));
            }
            let (c, s) = (col[j] / denom, col[j + 1] / denom);
            col[j] = denom;
            col[j + 1] = 0.0;
            cs.push(c);
            sn.push(s);
            let gj = g[j];
            g[j] = c * gj;
            g.push(-s * gj);
            hess.push(col);
            let done = g[j + 1].abs() <= target || wn == 0.0;
            if !done {
                basis.push(w.iter().map(|v| v / wn).collect());
            }
            if done || j + 1 == GMRES_RESTART {
                // back substitution on the upper-triangular system
                let k = j + 1;
                let mut yv = vec![0.0; k];
                for i in (0..k).rev() {
                    let mut acc = g[i];
                    for l in i + 1..k {
                        acc -= hess[l][i] * yv[l];
                    }
                    yv[i] = acc / hess[i][i];
                }
                for (i, yi) in yv.iter().enumerate() {
                    for (xk, vk) in x.iter_mut().zip(&basis[i]) {
                        *xk += yi * vk;
                    }
                }
                break;
            }
        }
        let ax = apply(&x)?;
        r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    }
    if dot(&r, &r).sqrt() <= target * 1e3 {
        return Ok(x);
    }
    Err(Error::numerical("GMRES did not converge in the adjoint solve"))
}
