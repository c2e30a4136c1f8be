//! The optimized nonlinear greedy reconstruction driver: initialization,
//! fitting sweeps, splitting steps and basis reordering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::FixedPointConfig;
use crate::grid::{Grid, VectorField2};
use crate::nonlinearity::{Coupling, Monomial, MonomialBasis, NonlinearitySpec};
use crate::objectives::{
    discrimination, fitting_objective, splitting_objective, ControlBox, RegularizerSign,
    SolverContext,
};
use crate::optimizer::{minimize_box_from, minimize_box_weighted, OptimConfig};
use crate::seeds::{derive_seed, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreedyConfig {
    pub tol1: f64,
    pub nu: f64,
    pub alpha_max: f64,
    pub control_optim: OptimConfig,
    pub coeff_optim: OptimConfig,
    pub fp: FixedPointConfig,
    pub control_box: ControlBox,
    pub regularizer_sign: RegularizerSign,
    pub seed: u64,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            tol1: f64::EPSILON,
            nu: 1e-6,
            alpha_max: 1.0,
            control_optim: OptimConfig {
                grad_tol: 1e-9,
                restarts: 4,
                ..OptimConfig::default()
            },
            coeff_optim: OptimConfig {
                grad_tol: 1e-8,
                restarts: 2,
                ..OptimConfig::default()
            },
            fp: FixedPointConfig::default(),
            control_box: ControlBox::default(),
            regularizer_sign: RegularizerSign::Penalty,
            seed: 0,
        }
    }
}

impl GreedyConfig {
    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(problems.join("; ")))
        }
    }

    /// Every violated constraint.
    pub(crate) fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.tol1 > 0.0) {
            problems.push(format!("tol1 must be > 0, got {}", self.tol1));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            problems.push(format!("nu must be >= 0, got {}", self.nu));
        }
        if !(self.alpha_max >= 0.0 && self.alpha_max.is_finite()) {
            problems.push(format!("alpha_max must be >= 0, got {}", self.alpha_max));
        }
        if let Err(e) = self.control_box.validate() {
            problems.push(e.to_string());
        }
        for (name, o) in [("control_optim", &self.control_optim), ("coeff_optim", &self.coeff_optim)] {
            for p in o.problems().unwrap_or_default() {
                problems.push(format!("{name}: {p}"));
            }
        }
        problems.extend(self.fp.problems().unwrap_or_default());
        problems
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    /// The last `f_max` fell to `tol1` or below before the basis was used up.
    Tol1,
    /// One control per basis element was computed.
    Exhausted,
    /// Every candidate of a step failed; only present on partial runs.
    Failed,
}

/// Outcome of one candidate subproblem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub position: usize,
    pub term: Monomial,
    /// Minimized objective value, `None` if the subproblem failed.
    pub objective: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Fitted coefficients for one candidate of a fitting sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub position: usize,
    pub term: Monomial,
    /// Leading coefficients, one per computed control; empty on failure.
    pub beta: Vec<f64>,
    pub summary: CandidateSummary,
}

/// Result of an initialization or splitting step, before the basis swap.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub control: Vec<f64>,
    pub winner: usize,
    pub f_max: f64,
    pub candidates: Vec<CandidateSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Number of controls available before this step.
    pub k: usize,
    pub candidates: Vec<CandidateSummary>,
    pub fits: Vec<CandidateFit>,
    pub winner_position: usize,
    pub winner_term: Monomial,
    /// Positions swapped in the basis.
    pub swap: (usize, usize),
    pub f_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyRun {
    pub grid: Grid,
    pub basis: MonomialBasis,
    pub controls: Vec<VectorField2>,
    /// Fits of the last sweep.
    pub betas: Vec<CandidateFit>,
    pub f_max_history: Vec<f64>,
    pub k_final: usize,
    pub stopped_by: StopReason,
    pub records: Vec<IterationRecord>,
}

/// Solver state and bounds shared by all steps of one run.
pub struct Greedy<'a> {
    ctx: SolverContext,
    cfg: &'a GreedyConfig,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

struct CandidateSolve {
    x: Vec<f64>,
    value: f64,
    converged: bool,
    iterations: usize,
}

impl<'a> Greedy<'a> {
    pub fn new(grid: Grid, coupling: Coupling, cfg: &'a GreedyConfig) -> Result<Self> {
        cfg.validate()?;
        let ctx = SolverContext::new(grid, coupling, cfg.fp)?;
        let (lo, hi) = cfg.control_box.flat_bounds(&grid);
        Ok(Self { ctx, cfg, lo, hi })
    }

    pub fn context(&self) -> &SolverContext {
        &self.ctx
    }

    /// The zero control, clamped into the box.
    fn zero_control(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &u)| 0.0f64.max(l).min(u))
            .collect()
    }

    /// Fills the start list up to `total` with spatially constant controls
    /// drawn uniformly from the box. Nodewise noise averages out under the
    /// solution operator and starts too close to the zero control.
    fn pad_starts(&self, fixed: &[Vec<f64>], total: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut starts: Vec<Vec<f64>> = fixed.iter().take(total).cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = &self.cfg.control_box;
        let draw = |rng: &mut ChaCha8Rng, c: usize| {
            if b.eps_a[c] < b.eps_b[c] {
                rng.random_range(b.eps_a[c]..=b.eps_b[c])
            } else {
                b.eps_a[c]
            }
        };
        let m = self.lo.len() / 2;
        while starts.len() < total {
            let (c1, c2) = (draw(&mut rng, 0), draw(&mut rng, 1));
            let mut x = vec![c1; m];
            x.extend(std::iter::repeat_n(c2, m));
            starts.push(x);
        }
        starts
    }

    fn solve_control(
        &self,
        basis: &MonomialBasis,
        beta: &[f64],
        position: usize,
        starts: &[Vec<f64>],
        seed: u64,
    ) -> Result<CandidateSolve> {
        let optim = OptimConfig {
            seed,
            ..self.cfg.control_optim
        };
        let starts = self.pad_starts(starts, optim.restarts, seed);
        let f = |eps: &[f64]| {
            splitting_objective(
                &self.ctx,
                basis,
                beta,
                position,
                eps,
                self.cfg.nu,
                self.cfg.regularizer_sign,
            )
            .map(|e| (e.value, e.gradient))
        };
        let h = self.ctx.grid().h();
        let r = minimize_box_weighted(f, &starts, &self.lo, &self.hi, &optim, h * h)?;
        Ok(CandidateSolve {
            x: r.x,
            value: r.value,
            converged: r.converged,
            iterations: r.iterations,
        })
    }

    /// Deterministic reduction: smallest objective, ties to the lowest position.
    fn pick_winner(
        &self,
        iteration: usize,
        basis: &MonomialBasis,
        betas: &[Vec<f64>],
        outcomes: Vec<(usize, Result<CandidateSolve>)>,
    ) -> Result<StepOutcome> {
        let mut candidates = Vec::with_capacity(outcomes.len());
        let mut best: Option<(usize, usize, f64)> = None;
        let mut solved = Vec::with_capacity(outcomes.len());
        for (slot, (position, outcome)) in outcomes.into_iter().enumerate() {
            let summary = match &outcome {
                Ok(s) => CandidateSummary {
                    position,
                    term: basis.term(position),
                    objective: Some(s.value),
                    converged: s.converged,
                    iterations: s.iterations,
                },
                Err(e) => {
                    log::warn!("candidate {} failed: {e}", basis.term(position));
                    CandidateSummary {
                        position,
                        term: basis.term(position),
                        objective: None,
                        converged: false,
                        iterations: 0,
                    }
                }
            };
            if let Ok(s) = &outcome {
                if best.is_none_or(|(_, _, v)| s.value < v) {
                    best = Some((slot, position, s.value));
                }
            }
            candidates.push(summary);
            solved.push(outcome.ok());
        }
        let Some((slot, winner, _)) = best else {
            return Err(Error::GreedyFailure {
                iteration,
                reason: "every candidate subproblem failed".into(),
                partial: None,
            });
        };
        let control = solved[slot].take().expect("winner solved").x;
        let f_max = discrimination(&self.ctx, basis, &betas[slot], winner, &control)?.misfit;
        Ok(StepOutcome {
            control,
            winner,
            f_max,
            candidates,
        })
    }

    /// Best control and candidate against the zero surrogate, over all positions.
    pub fn initialization(&self, basis: &MonomialBasis) -> Result<StepOutcome> {
        let starts = vec![self.zero_control()];
        let outcomes: Vec<(usize, Result<CandidateSolve>)> = (0..basis.len())
            .into_par_iter()
            .map(|p| {
                let seed = derive_seed(self.cfg.seed, &[0, tag::INITIALIZATION, basis.order()[p] as u64]);
                (p, self.solve_control(basis, &[], p, &starts, seed))
            })
            .collect();
        let betas = vec![Vec::new(); basis.len()];
        self.pick_winner(0, basis, &betas, outcomes)
    }

    /// Fits the leading `controls.len()` coefficients to every remaining
    /// candidate's states.
    pub fn fitting_sweep(
        &self,
        basis: &MonomialBasis,
        controls: &[VectorField2],
    ) -> Result<Vec<CandidateFit>> {
        let k = controls.len();
        if k == 0 || k >= basis.len() {
            return Err(Error::invalid(format!(
                "fitting sweep needs 1 <= k < K, got k = {k}, K = {}",
                basis.len()
            )));
        }
        let lo = vec![0.0; k];
        let hi = vec![self.cfg.alpha_max; k];
        let fits: Vec<CandidateFit> = (k..basis.len())
            .into_par_iter()
            .map(|p| {
                let term = basis.term(p);
                let seed = derive_seed(self.cfg.seed, &[k as u64, tag::FITTING, basis.order()[p] as u64]);
                let solved = self.fit_candidate(basis, controls, p, &lo, &hi, seed);
                match solved {
                    Ok(r) => CandidateFit {
                        position: p,
                        term,
                        beta: r.x,
                        summary: CandidateSummary {
                            position: p,
                            term,
                            objective: Some(r.value),
                            converged: r.converged,
                            iterations: r.iterations,
                        },
                    },
                    Err(e) => {
                        log::warn!("fitting for candidate {term} failed: {e}");
                        CandidateFit {
                            position: p,
                            term,
                            beta: Vec::new(),
                            summary: CandidateSummary {
                                position: p,
                                term,
                                objective: None,
                                converged: false,
                                iterations: 0,
                            },
                        }
                    }
                }
            })
            .collect();
        if fits.iter().all(|f| f.summary.objective.is_none()) {
            return Err(Error::GreedyFailure {
                iteration: k,
                reason: "every fitting subproblem failed".into(),
                partial: None,
            });
        }
        Ok(fits)
    }

    fn fit_candidate(
        &self,
        basis: &MonomialBasis,
        controls: &[VectorField2],
        position: usize,
        lo: &[f64],
        hi: &[f64],
        seed: u64,
    ) -> Result<CandidateSolve> {
        let single = NonlinearitySpec::single(basis.term(position), self.ctx.coupling);
        let targets = controls
            .iter()
            .map(|e| self.ctx.state(&single, e))
            .collect::<Result<Vec<_>>>()?;
        let optim = OptimConfig {
            seed,
            ..self.cfg.coeff_optim
        };
        let f = |beta: &[f64]| {
            fitting_objective(&self.ctx, basis, beta, controls, &targets, self.cfg.nu)
                .map(|e| (e.value, e.gradient))
        };
        let r = minimize_box_from(f, &[lo.to_vec()], lo, hi, &optim)?;
        Ok(CandidateSolve {
            x: r.x,
            value: r.value,
            converged: r.converged,
            iterations: r.iterations,
        })
    }

    /// Most discriminating control over candidates with a successful fit.
    pub fn splitting(
        &self,
        basis: &MonomialBasis,
        controls: &[VectorField2],
        fits: &[CandidateFit],
    ) -> Result<StepOutcome> {
        let k = controls.len();
        let mut starts = vec![self.zero_control()];
        if let Some(prev) = controls.last().map(VectorField2::to_interior_flat) {
            if prev != starts[0] {
                starts.push(prev);
            }
        }
        let usable: Vec<&CandidateFit> = fits.iter().filter(|f| f.summary.objective.is_some()).collect();
        let outcomes: Vec<(usize, Result<CandidateSolve>)> = usable
            .par_iter()
            .map(|fit| {
                let seed = derive_seed(
                    self.cfg.seed,
                    &[k as u64, tag::SPLITTING, basis.order()[fit.position] as u64],
                );
                (
                    fit.position,
                    self.solve_control(basis, &fit.beta, fit.position, &starts, seed),
                )
            })
            .collect();
        let betas: Vec<Vec<f64>> = usable.iter().map(|f| f.beta.clone()).collect();
        self.pick_winner(k, basis, &betas, outcomes)
    }

    /// The full greedy loop.
    pub fn run(&self, mut basis: MonomialBasis) -> Result<GreedyRun> {
        basis.validate()?;
        let grid = *self.ctx.grid();
        let mut run = GreedyRun {
            grid,
            basis: basis.clone(),
            controls: Vec::new(),
            betas: Vec::new(),
            f_max_history: Vec::new(),
            k_final: 0,
            stopped_by: StopReason::Exhausted,
            records: Vec::new(),
        };
        let fail = |mut run: GreedyRun, e: Error| match e {
            Error::GreedyFailure { iteration, reason, .. } => {
                run.stopped_by = StopReason::Failed;
                Error::GreedyFailure {
                    iteration,
                    reason,
                    partial: Some(Box::new(run)),
                }
            }
            other => other,
        };

        let init = match self.initialization(&basis) {
            Ok(o) => o,
            Err(e) => return Err(fail(run, e)),
        };
        self.accept(&mut run, &mut basis, init, Vec::new())?;
        let k_max = basis.len();
        while run.controls.len() < k_max && run.f_max_history.last().is_some_and(|&f| f > self.cfg.tol1) {
            let step = self
                .fitting_sweep(&basis, &run.controls)
                .and_then(|fits| self.splitting(&basis, &run.controls, &fits).map(|o| (o, fits)));
            let (outcome, fits) = match step {
                Ok(v) => v,
                Err(e) => return Err(fail(run, e)),
            };
            self.accept(&mut run, &mut basis, outcome, fits)?;
        }
        run.stopped_by = if run.controls.len() < k_max {
            StopReason::Tol1
        } else {
            StopReason::Exhausted
        };
        Ok(run)
    }

    fn accept(
        &self,
        run: &mut GreedyRun,
        basis: &mut MonomialBasis,
        outcome: StepOutcome,
        fits: Vec<CandidateFit>,
    ) -> Result<()> {
        let k = run.controls.len();
        let winner_term = basis.term(outcome.winner);
        basis.swap(k, outcome.winner);
        log::info!(
            "greedy step {}: winner {} (position {}), f_max = {:.6e}",
            k + 1,
            winner_term,
            outcome.winner,
            outcome.f_max
        );
        run.controls
            .push(VectorField2::from_interior_flat(*self.ctx.grid(), &outcome.control)?);
        run.f_max_history.push(outcome.f_max);
        run.records.push(IterationRecord {
            k,
            candidates: outcome.candidates,
            fits: fits.clone(),
            winner_position: outcome.winner,
            winner_term,
            swap: (k, outcome.winner),
            f_max: outcome.f_max,
        });
        if !fits.is_empty() {
            run.betas = fits;
        }
        run.basis = basis.clone();
        run.k_final = run.controls.len();
        Ok(())
    }
}

pub fn run_initialization(
    grid: Grid,
    coupling: Coupling,
    basis: &MonomialBasis,
    cfg: &GreedyConfig,
) -> Result<StepOutcome> {
    Greedy::new(grid, coupling, cfg)?.initialization(basis)
}

pub fn run_fitting_sweep(
    grid: Grid,
    coupling: Coupling,
    basis: &MonomialBasis,
    controls: &[VectorField2],
    cfg: &GreedyConfig,
) -> Result<Vec<CandidateFit>> {
    Greedy::new(grid, coupling, cfg)?.fitting_sweep(basis, controls)
}

pub fn run_splitting(
    grid: Grid,
    coupling: Coupling,
    basis: &MonomialBasis,
    controls: &[VectorField2],
    fits: &[CandidateFit],
    cfg: &GreedyConfig,
) -> Result<StepOutcome> {
    Greedy::new(grid, coupling, cfg)?.splitting(basis, controls, fits)
}

pub fn run_ongr(
    grid: Grid,
    coupling: Coupling,
    basis: MonomialBasis,
    cfg: &GreedyConfig,
) -> Result<GreedyRun> {
    Greedy::new(grid, coupling, cfg)?.run(basis)
}
