//! Uniform grids on the square `(-x_max, x_max)^2`, nodal fields with
//! homogeneous Dirichlet boundary values, the five-point negative Laplacian
//! and the discrete norms used throughout the crate.
//!
//! Fields store every node, boundary included, in row-major order
//! `index = j * (N + 1) + i`. Linear solves work on interior-only vectors of
//! length `(N - 1)^2`, ordered the same way over the interior block.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest cell count for which the operator keeps a banded Cholesky factor;
/// larger grids fall back to conjugate gradients.
pub const DIRECT_SOLVE_MAX_CELLS: usize = 128;

const CG_REL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridShape", into = "GridShape")]
pub struct Grid {
    cells: usize,
    x_max: f64,
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct GridShape {
    cells: usize,
    x_max: f64,
}

impl TryFrom<GridShape> for Grid {
    type Error = Error;
    fn try_from(s: GridShape) -> Result<Self> {
        Grid::new(s.cells, s.x_max)
    }
}

impl From<Grid> for GridShape {
    fn from(g: Grid) -> Self {
        GridShape {
            cells: g.cells,
            x_max: g.x_max,
        }
    }
}

impl Grid {
    /// `cells` is the number of cells per side (`N`), `x_max` the half-width.
    pub fn new(cells: usize, x_max: f64) -> Result<Self> {
        if cells < 2 {
            return Err(Error::invalid(format!(
                "grid needs at least 2 cells per side, got N={cells}"
            )));
        }
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(Error::invalid(format!("x_max must be positive, got {x_max}")));
        }
        Ok(Self {
            cells,
            x_max,
            h: 2.0 * x_max / cells as f64,
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Nodes per side, `N + 1`.
    pub fn side(&self) -> usize {
        self.cells + 1
    }

    pub fn node_count(&self) -> usize {
        self.side() * self.side()
    }

    /// Interior nodes per side, `N - 1`.
    pub fn interior_side(&self) -> usize {
        self.cells - 1
    }

    pub fn interior_count(&self) -> usize {
        self.interior_side() * self.interior_side()
    }

    /// Coordinate of node `i` along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.h - self.x_max
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.side() + i
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.cells || j == self.cells
    }

    /// Iterates interior nodes as `(i, j, full_index)` in interior order.
    pub fn interior_nodes(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let n = self.cells;
        (1..n).flat_map(move |j| (1..n).map(move |i| (i, j, self.index(i, j))))
    }
}

/// One nodal component on a grid. Boundary values are always zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.node_count()],
        }
    }

    /// Samples `f(x1, x2)` on interior nodes; boundary nodes stay zero.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut field = Self::zeros(grid);
        for (i, j, idx) in grid.interior_nodes() {
            field.values[idx] = f(grid.coord(i), grid.coord(j));
        }
        field
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::invalid(format!(
                "field has {} values, grid expects {}",
                values.len(),
                grid.node_count()
            )));
        }
        let n = grid.cells();
        for j in 0..=n {
            for i in 0..=n {
                if grid.is_boundary(i, j) && values[grid.index(i, j)] != 0.0 {
                    return Err(Error::invalid(format!(
                        "boundary node ({i}, {j}) carries nonzero value"
                    )));
                }
            }
        }
        Ok(Self { grid, values })
    }

    pub fn from_interior(grid: Grid, interior: &[f64]) -> Self {
        debug_assert_eq!(interior.len(), grid.interior_count());
        let mut field = Self::zeros(grid);
        for ((_, _, idx), &v) in grid.interior_nodes().zip(interior) {
            field.values[idx] = v;
        }
        field
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn interior(&self) -> Vec<f64> {
        self.grid
            .interior_nodes()
            .map(|(_, _, idx)| self.values[idx])
            .collect()
    }

    /// Lumped `L^2` inner product `h^2 * sum(u * v)`.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        let h = self.grid.h;
        h * h * dot(&self.values, &other.values)
    }

    pub fn norm_l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Forward-difference gradient components over every edge, scaled by 1/h.
    fn forward_differences(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.grid.cells;
        let h = self.grid.h;
        let x_edges = (0..=n).flat_map(move |j| {
            (0..n).map(move |i| (self.get(i + 1, j) - self.get(i, j)) / h)
        });
        let y_edges = (0..n).flat_map(move |j| {
            (0..=n).map(move |i| (self.get(i, j + 1) - self.get(i, j)) / h)
        });
        x_edges.chain(y_edges)
    }

    /// Discrete `H^1_0` inner product `(Du, Dv)` with forward differences.
    pub fn grad_inner(&self, other: &ScalarField) -> f64 {
        let h = self.grid.h;
        h * h
            * self
                .forward_differences()
                .zip(other.forward_differences())
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }
}

/// A two-component nodal field `(u1, u2)` on one grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorField2 {
    pub u1: ScalarField,
    pub u2: ScalarField,
}

impl VectorField2 {
    pub fn new(u1: ScalarField, u2: ScalarField) -> Result<Self> {
        if u1.grid != u2.grid {
            return Err(Error::invalid("components live on different grids"));
        }
        Ok(Self { u1, u2 })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            u1: ScalarField::zeros(grid),
            u2: ScalarField::zeros(grid),
        }
    }

    /// Spatially constant pair on the interior.
    pub fn constant(grid: Grid, c: [f64; 2]) -> Self {
        Self {
            u1: ScalarField::from_fn(grid, |_, _| c[0]),
            u2: ScalarField::from_fn(grid, |_, _| c[1]),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.u1.grid
    }

    /// Interior values as one flat vector: all of `u1`, then all of `u2`.
    pub fn to_interior_flat(&self) -> Vec<f64> {
        let mut out = self.u1.interior();
        out.extend(self.u2.interior());
        out
    }

    pub fn from_interior_flat(grid: Grid, flat: &[f64]) -> Result<Self> {
        let m = grid.interior_count();
        if flat.len() != 2 * m {
            return Err(Error::invalid(format!(
                "flat interior vector has length {}, expected {}",
                flat.len(),
                2 * m
            )));
        }
        Ok(Self {
            u1: ScalarField::from_interior(grid, &flat[..m]),
            u2: ScalarField::from_interior(grid, &flat[m..]),
        })
    }

    pub fn inner(&self, other: &VectorField2) -> f64 {
        self.u1.inner(&other.u1) + self.u2.inner(&other.u2)
    }

    pub fn sub(&self, other: &VectorField2) -> VectorField2 {
        let diff = |a: &ScalarField, b: &ScalarField| ScalarField {
            grid: a.grid,
            values: a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect(),
        };
        VectorField2 {
            u1: diff(&self.u1, &other.u1),
            u2: diff(&self.u2, &other.u2),
        }
    }

    /// `(y1, y2)` pairs at every node, boundary included.
    pub fn point_pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.u1.values.iter().copied().zip(self.u2.values.iter().copied())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l2: f64,
    pub h1: f64,
    pub laplace: f64,
}

/// Lumped `L^2`, forward-difference `H^1_0` and `||-Delta_h u||_{L^2}` norms.
pub fn norms(op: &LaplaceOperator, field: &VectorField2) -> Norms {
    let l2 = field.inner(field).sqrt();
    let h1 = (field.u1.grad_inner(&field.u1) + field.u2.grad_inner(&field.u2)).sqrt();
    let lap = VectorField2 {
        u1: op.apply(&field.u1),
        u2: op.apply(&field.u2),
    };
    Norms {
        l2,
        h1,
        laplace: lap.inner(&lap).sqrt(),
    }
}

/// Lower band of a symmetric positive-definite banded matrix and its
/// Cholesky factor. Row `i` stores entries `(i, i - d)` for `d = 0..=bw`.
#[derive(Clone, Debug)]
struct BandedCholesky {
    n: usize,
    bw: usize,
    factor: Vec<f64>,
}

impl BandedCholesky {
    fn factorize(n: usize, bw: usize, mut band: Vec<f64>) -> Result<Self> {
        let w = bw + 1;
        for i in 0..n {
            let start = i.saturating_sub(bw);
            for j in start..=i {
                let mut s = band[i * w + (i - j)];
                for k in start.max(j.saturating_sub(bw))..j {
                    s -= band[i * w + (i - k)] * band[j * w + (j - k)];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(Error::numerical(format!(
                            "Cholesky breakdown at row {i}: pivot {s:e}"
                        )));
                    }
                    band[i * w] = s.sqrt();
                } else {
                    band[i * w + (i - j)] = s / band[j * w];
                }
            }
        }
        Ok(Self {
            n,
            bw,
            factor: band,
        })
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let l = &self.factor;
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= l[i * w + (i - k)] * x[k];
            }
            x[i] = s / l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= l[k * w + (k - i)] * x[k];
            }
            x[i] = s / l[i * w];
        }
    }
}

#[derive(Clone, Debug)]
enum Backend {
    Direct(BandedCholesky),
    ConjugateGradient,
}

/// The five-point discretization of `-Delta` on interior nodes with
/// homogeneous Dirichlet conditions. Immutable once built.
#[derive(Clone, Debug)]
pub struct LaplaceOperator {
    grid: Grid,
    backend: Backend,
}

impl LaplaceOperator {
    pub fn new(grid: Grid) -> Result<Self> {
        let backend = if grid.cells() <= DIRECT_SOLVE_MAX_CELLS {
            let s = grid.interior_side();
            let n = grid.interior_count();
            let bw = s;
            let w = bw + 1;
            let inv_h2 = 1.0 / (grid.h() * grid.h());
            let mut band = vec![0.0; n * w];
            for r in 0..n {
                band[r * w] = 4.0 * inv_h2;
                if r % s != 0 {
                    band[r * w + 1] = -inv_h2;
                }
                if r >= s {
                    band[r * w + s] = -inv_h2;
                }
            }
            Backend::Direct(BandedCholesky::factorize(n, bw, band)?)
        } else {
            Backend::ConjugateGradient
        };
        Ok(Self { grid, backend })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `out = L u` on an interior vector.
    pub fn apply_interior(&self, u: &[f64], out: &mut [f64]) {
        let s = self.grid.interior_side();
        let inv_h2 = 1.0 / (self.grid.h() * self.grid.h());
        for r in 0..s {
            for c in 0..s {
                let k = r * s + c;
                let mut acc = 4.0 * u[k];
                if c > 0 {
                    acc -= u[k - 1];
                }
                if c + 1 < s {
                    acc -= u[k + 1];
                }
                if r > 0 {
                    acc -= u[k - s];
                }
                if r + 1 < s {
                    acc -= u[k + s];
                }
                out[k] = acc * inv_h2;
            }
        }
    }

    pub fn apply(&self, u: &ScalarField) -> ScalarField {
        let x = u.interior();
        let mut out = vec![0.0; x.len()];
        self.apply_interior(&x, &mut out);
        ScalarField::from_interior(self.grid, &out)
    }

    /// Solves `L u = rhs` on an interior vector.
    pub fn solve_interior(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match &self.backend {
            Backend::Direct(chol) => {
                let mut x = rhs.to_vec();
                chol.solve_in_place(&mut x);
                Ok(x)
            }
            Backend::ConjugateGradient => self.conjugate_gradient(rhs),
        }
    }

    /// Solves `L u = rhs` on interior nodes; boundary of the result is zero.
    pub fn solve(&self, rhs: &ScalarField) -> Result<ScalarField> {
        if rhs.grid != self.grid {
            return Err(Error::invalid("right-hand side lives on a different grid"));
        }
        let x = self.solve_interior(&rhs.interior())?;
        Ok(ScalarField::from_interior(self.grid, &x))
    }

    fn conjugate_gradient(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = b.len();
        let b_norm = dot(b, b).sqrt();
        let mut x = vec![0.0; n];
        if b_norm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rr = dot(&r, &r);
        for _ in 0..(10 * n).max(100) {
            self.apply_interior(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return Err(Error::numerical("conjugate gradient breakdown"));
            }
            let a = rr / pap;
            for i in 0..n {
                x[i] += a * p[i];
                r[i] -= a * ap[i];
            }
            let rr_new = dot(&r, &r);
            if rr_new.sqrt() <= CG_REL_TOL * b_norm {
                return Ok(x);
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        Err(Error::numerical("conjugate gradient did not converge"))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
