//! Monomial bases, coefficient vectors, and the lifted two-component
//! nonlinearity `g(y) = (gamma1 * G(y), -gamma2 * G(y))`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField2};

/// `y1^p1 * y2^p2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Monomial {
    pub p1: u32,
    pub p2: u32,
}

impl Monomial {
    pub const fn new(p1: u32, p2: u32) -> Self {
        Self { p1, p2 }
    }

    pub fn degree(&self) -> u32 {
        self.p1 + self.p2
    }

    pub fn eval(&self, y1: f64, y2: f64) -> f64 {
        y1.powi(self.p1 as i32) * y2.powi(self.p2 as i32)
    }

    /// Value and both partial derivatives.
    pub fn eval_with_grad(&self, y1: f64, y2: f64) -> (f64, f64, f64) {
        let (a, b) = (self.p1 as i32, self.p2 as i32);
        let v1 = y1.powi(a);
        let v2 = y2.powi(b);
        let d1 = if a == 0 { 0.0 } else { a as f64 * y1.powi(a - 1) };
        let d2 = if b == 0 { 0.0 } else { b as f64 * y2.powi(b - 1) };
        (v1 * v2, d1 * v2, v1 * d2)
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let part = |name: &str, p: u32| match p {
            0 => None,
            1 => Some(name.to_string()),
            _ => Some(format!("{name}^{p}")),
        };
        let parts: Vec<String> = [part("y1", self.p1), part("y2", self.p2)]
            .into_iter()
            .flatten()
            .collect();
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join("*"))
        }
    }
}

impl FromStr for Monomial {
    type Err = Error;

    /// Parses labels such as `1`, `y1`, `y1^2`, `y1*y2`, `y1^2*y2^3`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "1" {
            return Ok(Monomial::new(0, 0));
        }
        let mut m = Monomial::new(0, 0);
        for factor in s.split('*') {
            let (var, pow) = match factor.split_once('^') {
                Some((v, p)) => (
                    v.trim(),
                    p.trim()
                        .parse::<u32>()
                        .map_err(|_| Error::invalid(format!("bad exponent in monomial '{s}'")))?,
                ),
                None => (factor.trim(), 1),
            };
            match var {
                "y1" => m.p1 += pow,
                "y2" => m.p2 += pow,
                _ => return Err(Error::invalid(format!("unknown variable in monomial '{s}'"))),
            }
        }
        Ok(m)
    }
}

/// Ordered list of monomials with the permutation applied by greedy swaps.
///
/// Position `p` holds `terms[p]`; `order[p]` is that monomial's index in the
/// initial enumeration. Coefficient vectors are always aligned with positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonomialBasis {
    degree: u32,
    terms: Vec<Monomial>,
    order: Vec<usize>,
}

impl MonomialBasis {
    /// All monomials of total degree at most `degree`, sorted by total degree,
    /// then by largest single exponent, then by descending `y1` exponent:
    /// `1, y1, y2, y1*y2, y1^2, y2^2, y1^2*y2, ...`.
    pub fn enumerate(degree: u32) -> Self {
        let mut terms: Vec<Monomial> = (0..=degree)
            .flat_map(|d| (0..=d).map(move |p1| Monomial::new(p1, d - p1)))
            .collect();
        terms.sort_by_key(|m| (m.degree(), m.p1.max(m.p2), std::cmp::Reverse(m.p1)));
        let order = (0..terms.len()).collect();
        Self {
            degree,
            terms,
            order,
        }
    }

    /// Arbitrary basis of distinct monomials.
    pub fn from_terms(terms: Vec<Monomial>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("basis must contain at least one monomial"));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &terms {
            if !seen.insert(*t) {
                return Err(Error::invalid(format!("monomial {t} appears twice")));
            }
        }
        let degree = terms.iter().map(Monomial::degree).max().unwrap_or(0);
        let order = (0..terms.len()).collect();
        Ok(Self {
            degree,
            terms,
            order,
        })
    }

    /// Signed-degree entry point used by configuration code.
    pub fn try_enumerate(degree: i64) -> Result<Self> {
        if degree < 0 {
            return Err(Error::invalid(format!("basis degree must be >= 0, got {degree}")));
        }
        Ok(Self::enumerate(degree as u32))
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn term(&self, position: usize) -> Monomial {
        self.terms[position]
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn position_of(&self, m: Monomial) -> Option<usize> {
        self.terms.iter().position(|t| *t == m)
    }

    pub fn swap(&mut self, a: usize, b: usize) {
        self.terms.swap(a, b);
        self.order.swap(a, b);
    }

    /// Checks the stored permutation against the terms, after deserialization.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.terms.len()];
        for &o in &self.order {
            if o >= seen.len() || seen[o] {
                return Err(Error::invalid("basis order is not a permutation"));
            }
            seen[o] = true;
        }
        if self.order.len() != self.terms.len() {
            return Err(Error::invalid("basis order length mismatch"));
        }
        Ok(())
    }
}

/// `(i1+i2+..)` choose: `K = (P + 1)(P + 2) / 2`.
pub fn basis_size(degree: u32) -> usize {
    let p = degree as usize;
    (p + 1) * (p + 2) / 2
}

/// Coefficients in `[0, alpha_max]`, aligned with basis positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoeffVector {
    values: Vec<f64>,
    alpha_max: f64,
}

impl CoeffVector {
    pub fn new(values: Vec<f64>, alpha_max: f64) -> Result<Self> {
        if !(alpha_max >= 0.0) || !alpha_max.is_finite() {
            return Err(Error::invalid(format!("alpha_max must be >= 0, got {alpha_max}")));
        }
        if let Some((j, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && **v <= alpha_max))
        {
            return Err(Error::invalid(format!(
                "coefficient {j} = {v} outside [0, {alpha_max}]"
            )));
        }
        Ok(Self { values, alpha_max })
    }

    pub fn zeros(len: usize, alpha_max: f64) -> Self {
        Self {
            values: vec![0.0; len],
            alpha_max,
        }
    }

    /// Places `leading` in the first positions and zeros after, the
    /// restricted set used at greedy iteration `leading.len()`.
    pub fn restricted(leading: &[f64], len: usize, alpha_max: f64) -> Result<Self> {
        if leading.len() > len {
            return Err(Error::invalid("restricted prefix longer than the basis"));
        }
        let mut values = leading.to_vec();
        values.resize(len, 0.0);
        Self::new(values, alpha_max)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Whether all entries past the first `k` vanish.
    pub fn is_restricted_to(&self, k: usize) -> bool {
        self.values.iter().skip(k).all(|&v| v == 0.0)
    }

    /// Coefficients keyed by monomial, independent of the basis order.
    pub fn by_monomial(&self, basis: &MonomialBasis) -> BTreeMap<Monomial, f64> {
        basis.terms().iter().copied().zip(self.values.iter().copied()).collect()
    }
}

/// Closed-form reference nonlinearities used to synthesize data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClosedForm {
    /// `0.05 * y1 * y2`
    Bilinear,
    /// `0.01 * sin(2 y1) * sin(2 y2)`
    Sinusoidal,
    /// `0.01 * exp(2 y1) * exp(2 y2)`
    Exponential,
}

impl ClosedForm {
    pub const ALL: [ClosedForm; 3] = [
        ClosedForm::Bilinear,
        ClosedForm::Sinusoidal,
        ClosedForm::Exponential,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ClosedForm::Bilinear => "bilinear",
            ClosedForm::Sinusoidal => "sinusoidal",
            ClosedForm::Exponential => "exponential",
        }
    }

    pub fn eval(&self, y1: f64, y2: f64) -> f64 {
        self.eval_with_grad(y1, y2).0
    }

    pub fn eval_with_grad(&self, y1: f64, y2: f64) -> (f64, f64, f64) {
        match self {
            ClosedForm::Bilinear => (0.05 * y1 * y2, 0.05 * y2, 0.05 * y1),
            ClosedForm::Sinusoidal => {
                let (s1, c1) = (2.0 * y1).sin_cos();
                let (s2, c2) = (2.0 * y2).sin_cos();
                (0.01 * s1 * s2, 0.02 * c1 * s2, 0.02 * s1 * c2)
            }
            ClosedForm::Exponential => {
                let v = 0.01 * (2.0 * y1).exp() * (2.0 * y2).exp();
                (v, 2.0 * v, 2.0 * v)
            }
        }
    }

    /// Taylor coefficients at the origin for all `i1, i2 <= d`.
    pub fn taylor_coeffs(&self, d: u32) -> BTreeMap<Monomial, f64> {
        let mut out = BTreeMap::new();
        for i1 in 0..=d {
            for i2 in 0..=d {
                let t = match self {
                    ClosedForm::Bilinear => {
                        if i1 == 1 && i2 == 1 {
                            0.05
                        } else {
                            0.0
                        }
                    }
                    ClosedForm::Sinusoidal => 0.01 * sine2_coeff(i1) * sine2_coeff(i2),
                    ClosedForm::Exponential => 0.01 * exp2_coeff(i1) * exp2_coeff(i2),
                };
                out.insert(Monomial::new(i1, i2), t);
            }
        }
        out
    }
}

impl FromStr for ClosedForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bilinear" => Ok(ClosedForm::Bilinear),
            "sinusoidal" => Ok(ClosedForm::Sinusoidal),
            "exponential" => Ok(ClosedForm::Exponential),
            _ => Err(Error::invalid(format!(
                "unknown closed-form nonlinearity '{s}' (bilinear | sinusoidal | exponential)"
            ))),
        }
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// n-th Taylor coefficient of `exp(2y)`.
fn exp2_coeff(n: u32) -> f64 {
    2f64.powi(n as i32) / factorial(n)
}

/// n-th Taylor coefficient of `sin(2y)`.
fn sine2_coeff(n: u32) -> f64 {
    if n.is_multiple_of(2) {
        0.0
    } else {
        let sign = if (n / 2).is_multiple_of(2) { 1.0 } else { -1.0 };
        sign * exp2_coeff(n)
    }
}

/// Validated coupling constants, `gamma1 >= gamma2 > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    gamma1: f64,
    gamma2: f64,
}

impl Coupling {
    pub fn new(gamma1: f64, gamma2: f64) -> Result<Self> {
        if !(gamma2 > 0.0 && gamma1 >= gamma2 && gamma1.is_finite()) {
            return Err(Error::invalid(format!(
                "coupling needs gamma1 >= gamma2 > 0, got ({gamma1}, {gamma2})"
            )));
        }
        Ok(Self { gamma1, gamma2 })
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }
}

#[derive(Clone, Debug, PartialEq)]
enum ScalarModel {
    /// Sparse list of nonzero terms.
    Polynomial(Vec<(Monomial, f64)>),
    Closed(ClosedForm),
}

/// A scalar `G` lifted to `g(y) = (gamma1 G(y), -gamma2 G(y))`.
#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearitySpec {
    model: ScalarModel,
    coupling: Coupling,
}

impl NonlinearitySpec {
    /// `G = sum_p coeffs[p] * basis.term(p)`.
    pub fn basis_combo(basis: &MonomialBasis, coeffs: &[f64], coupling: Coupling) -> Result<Self> {
        if coeffs.len() > basis.len() {
            return Err(Error::invalid(format!(
                "{} coefficients for a basis of {}",
                coeffs.len(),
                basis.len()
            )));
        }
        let terms = basis
            .terms()
            .iter()
            .zip(coeffs)
            .filter(|(_, c)| **c != 0.0)
            .map(|(m, c)| (*m, *c))
            .collect();
        Ok(Self {
            model: ScalarModel::Polynomial(terms),
            coupling,
        })
    }

    /// A single basis element with unit coefficient.
    pub fn single(m: Monomial, coupling: Coupling) -> Self {
        Self {
            model: ScalarModel::Polynomial(vec![(m, 1.0)]),
            coupling,
        }
    }

    pub fn zero(coupling: Coupling) -> Self {
        Self {
            model: ScalarModel::Polynomial(Vec::new()),
            coupling,
        }
    }

    pub fn closed_form(kind: ClosedForm, coupling: Coupling) -> Self {
        Self {
            model: ScalarModel::Closed(kind),
            coupling,
        }
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn is_zero(&self) -> bool {
        matches!(&self.model, ScalarModel::Polynomial(t) if t.is_empty())
    }

    /// True when `G` has no `y`-dependence, so the Jacobian vanishes.
    pub fn is_constant(&self) -> bool {
        match &self.model {
            ScalarModel::Polynomial(t) => t.iter().all(|(m, _)| m.degree() == 0),
            ScalarModel::Closed(_) => false,
        }
    }

    /// The scalar `G(y)`.
    pub fn eval_scalar(&self, y1: f64, y2: f64) -> f64 {
        match &self.model {
            ScalarModel::Polynomial(terms) => terms.iter().map(|(m, c)| c * m.eval(y1, y2)).sum(),
            ScalarModel::Closed(k) => k.eval(y1, y2),
        }
    }

    /// `(G, dG/dy1, dG/dy2)`.
    pub fn scalar_with_grad(&self, y1: f64, y2: f64) -> (f64, f64, f64) {
        match &self.model {
            ScalarModel::Polynomial(terms) => {
                terms.iter().fold((0.0, 0.0, 0.0), |(v, d1, d2), (m, c)| {
                    let (mv, m1, m2) = m.eval_with_grad(y1, y2);
                    (v + c * mv, d1 + c * m1, d2 + c * m2)
                })
            }
            ScalarModel::Closed(k) => k.eval_with_grad(y1, y2),
        }
    }

    /// `g(y)` at one point.
    pub fn eval_point(&self, y1: f64, y2: f64) -> [f64; 2] {
        let v = self.eval_scalar(y1, y2);
        [self.coupling.gamma1 * v, -self.coupling.gamma2 * v]
    }

    /// Jacobian `dg/dy` at one point (rows are components of `g`).
    pub fn jacobian(&self, y1: f64, y2: f64) -> [[f64; 2]; 2] {
        let (_, d1, d2) = self.scalar_with_grad(y1, y2);
        let (g1, g2) = (self.coupling.gamma1, self.coupling.gamma2);
        [[g1 * d1, g1 * d2], [-g2 * d1, -g2 * d2]]
    }

    /// Applies `g` nodewise. Boundary nodes keep zero, matching the Dirichlet
    /// rows used by the solvers.
    pub fn eval_field(&self, field: &VectorField2) -> Result<VectorField2> {
        let grid = *field.grid();
        let mut out1 = vec![0.0; grid.node_count()];
        let mut out2 = vec![0.0; grid.node_count()];
        for (i, j, idx) in grid.interior_nodes() {
            let [a, b] = self.eval_point(field.u1.values()[idx], field.u2.values()[idx]);
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::numerical(format!(
                    "nonlinearity is not finite at node ({i}, {j})"
                )));
            }
            out1[idx] = a;
            out2[idx] = b;
        }
        Ok(VectorField2 {
            u1: ScalarField::from_values(grid, out1)?,
            u2: ScalarField::from_values(grid, out2)?,
        })
    }
}

/// `sum_p coeffs[p] * basis.term(p)(y)` without building a spec.
pub fn eval_combination(basis: &MonomialBasis, coeffs: &[f64], y1: f64, y2: f64) -> f64 {
    basis
        .terms()
        .iter()
        .zip(coeffs)
        .map(|(m, c)| c * m.eval(y1, y2))
        .sum()
}
