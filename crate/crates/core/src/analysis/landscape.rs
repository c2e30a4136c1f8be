use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::VectorField2;
use crate::nonlinearity::MonomialBasis;
use crate::objectives::{identification_objective, SolverContext};

use super::geometry::sym_eigenvalues;

/// Tensor lattice over two coefficients. An axis with one point sits at `lo`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub points: [usize; 2],
}

impl Lattice {
    /// Single point lattice.
    pub fn at(p: [f64; 2]) -> Self {
        Self {
            lo: p,
            hi: p,
            points: [1, 1],
        }
    }

    /// `n x n` lattice over `[c - r, c + r]` per axis, clipped to `[0, alpha_max]`.
    /// A single point sits on `c`.
    pub fn centered(c: [f64; 2], r: f64, n: usize, alpha_max: f64) -> Self {
        if n == 1 {
            return Self::at(c);
        }
        let lo = [(c[0] - r).max(0.0), (c[1] - r).max(0.0)];
        let hi = [(c[0] + r).min(alpha_max), (c[1] + r).min(alpha_max)];
        Self {
            lo,
            hi,
            points: [n, n],
        }
    }

    pub fn validate(&self, alpha_max: f64) -> Result<()> {
        for d in 0..2 {
            if self.points[d] == 0 {
                return Err(Error::invalid("lattice needs at least one point per axis"));
            }
            if !(0.0 <= self.lo[d] && self.lo[d] <= self.hi[d] && self.hi[d] <= alpha_max) {
                return Err(Error::invalid(format!(
                    "lattice axis {d} range [{}, {}] is not inside [0, {alpha_max}]",
                    self.lo[d], self.hi[d]
                )));
            }
        }
        Ok(())
    }

    pub fn axis(&self, d: usize) -> Vec<f64> {
        let n = self.points[d];
        if n == 1 {
            return vec![self.lo[d]];
        }
        (0..n)
            .map(|i| self.lo[d] + (self.hi[d] - self.lo[d]) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Identification objective on a 2-D slice. `values[i][j]` belongs to
/// `(axes[0][i], axes[1][j])`; failed solves are NaN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeScan {
    pub index_pair: [usize; 2],
    pub axes: [Vec<f64>; 2],
    pub values: Vec<Vec<f64>>,
}

impl LandscapeScan {
    /// Lattice indices and value of the smallest finite sample.
    pub fn argmin(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (i, row) in self.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v.is_finite() && best.is_none_or(|b| v < b.2) {
                    best = Some((i, j, v));
                }
            }
        }
        best
    }
}

#[allow(clippy::too_many_arguments)]
pub fn landscape_scan(
    ctx: &SolverContext,
    controls: &[VectorField2],
    data: &[VectorField2],
    basis: &MonomialBasis,
    alpha_base: &[f64],
    index_pair: [usize; 2],
    lattice: &Lattice,
    alpha_max: f64,
) -> Result<LandscapeScan> {
    let k = basis.len();
    if alpha_base.len() != k {
        return Err(Error::invalid(format!(
            "base coefficients have length {}, basis has {k}",
            alpha_base.len()
        )));
    }
    if index_pair[0] >= k || index_pair[1] >= k || index_pair[0] == index_pair[1] {
        return Err(Error::invalid(format!(
            "index pair {index_pair:?} must be two distinct positions below {k}"
        )));
    }
    lattice.validate(alpha_max)?;
    let axes = [lattice.axis(0), lattice.axis(1)];
    let values = axes[0]
        .par_iter()
        .map(|&a| {
            axes[1]
                .iter()
                .map(|&b| {
                    let mut alpha = alpha_base.to_vec();
                    alpha[index_pair[0]] = a;
                    alpha[index_pair[1]] = b;
                    identification_objective(ctx, basis, &alpha, controls, data)
                        .map_or(f64::NAN, |e| e.value)
                })
                .collect()
        })
        .collect();
    Ok(LandscapeScan {
        index_pair,
        axes,
        values,
    })
}

/// Nine-point central-difference Hessian of `f` at `x` with spacing `step`.
pub fn fd_hessian_2d(
    f: impl Fn([f64; 2]) -> Result<f64>,
    x: [f64; 2],
    step: f64,
) -> Result<[[f64; 2]; 2]> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let at = |d0: f64, d1: f64| f([x[0] + d0 * step, x[1] + d1 * step]);
    let c = at(0.0, 0.0)?;
    let h2 = step * step;
    let f00 = (at(1.0, 0.0)? - 2.0 * c + at(-1.0, 0.0)?) / h2;
    let f11 = (at(0.0, 1.0)? - 2.0 * c + at(0.0, -1.0)?) / h2;
    let f01 = (at(1.0, 1.0)? - at(1.0, -1.0)? - at(-1.0, 1.0)? + at(-1.0, -1.0)?) / (4.0 * h2);
    Ok([[f00, f01], [f01, f11]])
}

pub fn min_eigenvalue_2x2(m: [[f64; 2]; 2]) -> f64 {
    sym_eigenvalues(m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]).1
}
