//! Box-constrained minimization by projected limited-memory BFGS with an
//! Armijo backtracking search along the projection arc.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::dot;
use crate::objectives::project_box;

const MAX_SHRINKS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Largest coordinate change of the first trial step, before any
    /// curvature pairs are available.
    pub step_init: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    /// Number of stored curvature pairs; 0 gives projected steepest descent.
    pub memory: usize,
    pub seed: u64,
    /// Total number of local searches, the first from the supplied start.
    pub restarts: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-8,
            step_init: 0.25,
            armijo_c: 1e-4,
            shrink: 0.5,
            memory: 10,
            seed: 0,
            restarts: 1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        self.problems().map_or(Ok(()), |p| Err(Error::invalid(p.join("; "))))
    }

    pub(crate) fn problems(&self) -> Option<Vec<String>> {
        let mut out = Vec::new();
        if self.max_iters < 1 {
            out.push("max_iters must be >= 1".to_string());
        }
        if !(self.grad_tol > 0.0) {
            out.push(format!("grad_tol must be > 0, got {}", self.grad_tol));
        }
        if !(self.step_init > 0.0 && self.step_init.is_finite()) {
            out.push(format!("step_init must be > 0, got {}", self.step_init));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            out.push(format!("armijo_c must lie in (0, 1), got {}", self.armijo_c));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            out.push(format!("shrink must lie in (0, 1), got {}", self.shrink));
        }
        if self.restarts < 1 {
            out.push("restarts must be >= 1".to_string());
        }
        (!out.is_empty()).then_some(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub value: f64,
    pub projected_grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub projected_grad_norm: f64,
    pub iterations: usize,
    /// `projected_grad_norm <= grad_tol`.
    pub converged: bool,
    /// The search ended because no trial step gave sufficient decrease,
    /// typically at the accuracy floor of the objective and gradient.
    pub line_search_failed: bool,
    /// Index of the start that produced this result.
    pub start: usize,
    pub trace: Vec<TraceRecord>,
}

/// `|P(x - g) - x|_2`.
pub fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    weighted_projected_gradient_norm(x, g, lo, hi, 1.0)
}

/// Projected-gradient norm for the inner product `w * sum(u * v)`: the
/// gradient is `g / w` and the norm carries a factor `sqrt(w)`.
pub fn weighted_projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64], w: f64) -> f64 {
    w.sqrt()
        * x.iter()
            .zip(g)
            .zip(lo.iter().zip(hi))
            .map(|((&xi, &gi), (&l, &u))| {
                let d = (xi - gi / w).max(l).min(u) - xi;
                d * d
            })
            .sum::<f64>()
            .sqrt()
}

fn check_bounds(x0: &[f64], lo: &[f64], hi: &[f64]) -> Result<()> {
    if x0.len() != lo.len() || x0.len() != hi.len() {
        return Err(Error::invalid("start point and bounds have different lengths"));
    }
    if let Some(i) = (0..lo.len()).find(|&i| !(lo[i] <= hi[i])) {
        return Err(Error::invalid(format!("lower bound exceeds upper bound at {i}")));
    }
    Ok(())
}

/// Minimizes `f` over `[lo, hi]` from `x0` plus `cfg.restarts - 1` seeded
/// uniform random starts; the best result wins, ties to the earliest start.
pub fn minimize_box<F>(f: F, x0: &[f64], lo: &[f64], hi: &[f64], cfg: &OptimConfig) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    minimize_box_from(f, &[x0.to_vec()], lo, hi, cfg)
}

/// Like [`minimize_box`] with several fixed starts. The first
/// `min(starts.len(), restarts)` starts are used, then random ones until
/// `restarts` local searches have run. A start whose first evaluation fails
/// is skipped; if every start fails the first failure is returned.
pub fn minimize_box_from<F>(
    f: F,
    starts: &[Vec<f64>],
    lo: &[f64],
    hi: &[f64],
    cfg: &OptimConfig,
) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    minimize_box_weighted(f, starts, lo, hi, cfg, 1.0)
}

/// Like [`minimize_box_from`] for variables carrying the inner product
/// `weight * sum(u * v)`, such as nodal values with a lumped quadrature
/// weight. `f` returns Euclidean gradients; only the stationarity measure
/// depends on the weight, since the search directions are scale invariant.
pub fn minimize_box_weighted<F>(
    f: F,
    starts: &[Vec<f64>],
    lo: &[f64],
    hi: &[f64],
    cfg: &OptimConfig,
    weight: f64,
) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    if !(weight > 0.0 && weight.is_finite()) {
        return Err(Error::invalid(format!("metric weight must be > 0, got {weight}")));
    }
    if starts.is_empty() {
        return Err(Error::invalid("at least one start point is required"));
    }
    for s in starts {
        check_bounds(s, lo, hi)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.restarts;
    let mut best: Option<OptimResult> = None;
    let mut first_err: Option<Error> = None;
    for index in 0..total {
        let start = if index < starts.len() {
            starts[index].clone()
        } else {
            lo.iter()
                .zip(hi)
                .map(|(&l, &u)| if l < u { rng.random_range(l..=u) } else { l })
                .collect()
        };
        match local_search(&f, &start, lo, hi, cfg, weight) {
            Ok(mut r) => {
                r.start = index;
                if best.as_ref().is_none_or(|b| r.value < b.value) {
                    best = Some(r);
                }
            }
            Err(e) => {
                log::debug!("start {index} failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one start ran"))
}

/// Maximizes `f` by minimizing `-f`; the reported value is `max f`.
pub fn maximize_box<F>(f: F, x0: &[f64], lo: &[f64], hi: &[f64], cfg: &OptimConfig) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let neg = |x: &[f64]| f(x).map(|(v, g)| (-v, g.into_iter().map(|gi| -gi).collect()));
    let mut r = minimize_box(neg, x0, lo, hi, cfg)?;
    r.value = -r.value;
    for t in &mut r.trace {
        t.value = -t.value;
    }
    Ok(r)
}

struct Memory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
    cap: usize,
}

impl Memory {
    fn new(cap: usize) -> Self {
        Self {
            pairs: VecDeque::with_capacity(cap),
            cap,
        }
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        if self.cap == 0 {
            return;
        }
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if !(sy > 1e-12 * yy.sqrt() * dot(&s, &s).sqrt()) || !(sy > 0.0) {
            return;
        }
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
    }

    /// Two-loop recursion applied to `g` restricted to `free`.
    fn direction(&self, g: &[f64], free: &[bool]) -> Vec<f64> {
        let mask = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(free)
                .map(|(&a, &f)| if f { a } else { 0.0 })
                .collect()
        };
        let mut q = mask(g);
        let masked: Vec<(Vec<f64>, Vec<f64>)> = self
            .pairs
            .iter()
            .map(|(s, y)| (mask(s), mask(y)))
            .collect();
        let mut alphas = Vec::with_capacity(masked.len());
        for (s, y) in masked.iter().rev() {
            let sy = dot(s, y);
            if sy <= 0.0 {
                alphas.push(0.0);
                continue;
            }
            let a = dot(s, &q) / sy;
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y)) = masked.last() {
            let sy = dot(s, y);
            let yy = dot(y, y);
            if sy > 0.0 && yy > 0.0 {
                let gamma = sy / yy;
                q.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for ((s, y), a) in masked.iter().zip(alphas.iter().rev()) {
            let sy = dot(s, y);
            if sy <= 0.0 {
                continue;
            }
            let b = dot(y, &q) / sy;
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        mask(&q).into_iter().map(|v| -v).collect()
    }
}

fn local_search<F>(
    f: &F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    cfg: &OptimConfig,
    weight: f64,
) -> Result<OptimResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = project_box(x0, lo, hi)?;
    let (mut fx, mut g) = f(&x).map_err(|e| Error::OracleFailure {
        x: x.clone(),
        source: Box::new(e),
    })?;
    if !fx.is_finite() || g.len() != x.len() {
        return Err(Error::OracleFailure {
            x,
            source: Box::new(Error::numerical("objective is not finite at the start point")),
        });
    }
    let mut memory = Memory::new(cfg.memory);
    let mut pgn = weighted_projected_gradient_norm(&x, &g, lo, hi, weight);
    let mut trace = vec![TraceRecord {
        iteration: 0,
        value: fx,
        projected_grad_norm: pgn,
    }];
    let mut iterations = 0;
    let mut line_search_failed = false;
    while pgn > cfg.grad_tol && iterations < cfg.max_iters {
        let free: Vec<bool> = (0..x.len())
            .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        let mut accepted = None;
        // One quasi-Newton attempt, then one steepest-descent attempt.
        for use_memory in [true, false] {
            if !use_memory && memory.pairs.is_empty() {
                break;
            }
            if !use_memory {
                memory.pairs.clear();
            }
            let mut d = memory.direction(&g, &free);
            if !(dot(&d, &g) < 0.0) {
                d = g
                    .iter()
                    .zip(&free)
                    .map(|(&gi, &fr)| if fr { -gi } else { 0.0 })
                    .collect();
            }
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if dmax == 0.0 {
                break;
            }
            let mut t = if memory.pairs.is_empty() {
                cfg.step_init / dmax
            } else {
                1.0
            };
            for _ in 0..=MAX_SHRINKS {
                let trial: Vec<f64> = (0..x.len())
                    .map(|i| (x[i] + t * d[i]).max(lo[i]).min(hi[i]))
                    .collect();
                let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let decrease = dot(&g, &step);
                if decrease >= 0.0 {
                    t *= cfg.shrink;
                    continue;
                }
                match f(&trial) {
                    Ok((ft, gt))
                        if ft.is_finite()
                            && gt.len() == x.len()
                            && ft <= fx + cfg.armijo_c * decrease =>
                    {
                        accepted = Some((trial, ft, gt, step));
                        break;
                    }
                    Ok(_) => {}
                    Err(e) => log::trace!("trial point rejected: {e}"),
                }
                t *= cfg.shrink;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((xn, fnew, gn, s)) = accepted else {
            line_search_failed = true;
            break;
        };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        memory.push(s, y);
        x = xn;
        fx = fnew;
        g = gn;
        iterations += 1;
        pgn = weighted_projected_gradient_norm(&x, &g, lo, hi, weight);
        trace.push(TraceRecord {
            iteration: iterations,
            value: fx,
            projected_grad_norm: pgn,
        });
    }
    Ok(OptimResult {
        x,
        value: fx,
        projected_grad_norm: pgn,
        iterations,
        converged: pgn <= cfg.grad_tol,
        line_search_failed,
        start: 0,
        trace,
    })
}
