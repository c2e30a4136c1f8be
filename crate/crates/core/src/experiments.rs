//! Subcommand drivers. Each reads a config or an artifact directory, runs one
//! experiment and writes its outputs next to `artifact.json`.

use std::path::Path;
use std::time::Instant;

use log::info;
use serde::Serialize;

use crate::analysis::{
    collinearity, constructed_control, error_field, fd_hessian_2d, generate_data, identify,
    landscape_scan, max_abs_error_on_points, min_eigenvalue_2x2, random_constant_controls,
    solution_sets, stability_probe, taylor_error_table, ErrorField, Lattice, SolutionSet,
};
use crate::artifact::{
    fmt_f64, matrix_csv, table_csv, write_json, write_text, FailureMarker, IdentificationRecord,
    LandscapeRecord, RunArtifact, StabilityRecord,
};
use crate::config::{ExperimentConfig, TruthConfig};
use crate::error::{Error, Result};
use crate::greedy::{run_ongr, StopReason};
use crate::grid::VectorField2;
use crate::nonlinearity::MonomialBasis;
use crate::objectives::{identification_objective, SolverContext};

/// An artifact plus whether any stage ended without converging.
#[derive(Debug)]
pub struct Outcome {
    pub artifact: RunArtifact,
    pub partial: bool,
}

fn timed<T>(a: &mut RunArtifact, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let r = f();
    a.timings.insert(stage.to_string(), t.elapsed().as_secs_f64());
    r
}

fn context(cfg: &ExperimentConfig) -> Result<SolverContext> {
    SolverContext::new(cfg.grid()?, cfg.coupling()?, cfg.fixed_point())
}

/// Basis whose positions the artifact's coefficients refer to.
pub fn artifact_basis(a: &RunArtifact) -> Result<MonomialBasis> {
    match (&a.controls, &a.greedy) {
        (None, Some(g)) => Ok(g.basis.clone()),
        _ => a.config.basis(),
    }
}

pub fn cmd_greedy(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let mut a = RunArtifact::new(cfg.clone(), "greedy");
    let gcfg = cfg.greedy_config();
    info!("greedy: N={}, P={}, K={}", cfg.grid.n, cfg.model.degree, cfg.basis()?.len());
    let result = timed(&mut a, "greedy", || {
        run_ongr(cfg.grid()?, cfg.coupling()?, cfg.basis()?, &gcfg)
    });
    let partial = match result {
        Ok(run) => {
            let failed = run.stopped_by == StopReason::Failed;
            a.greedy = Some(run);
            failed
        }
        Err(Error::GreedyFailure {
            iteration,
            reason,
            partial: Some(run),
        }) => {
            a.failure = Some(FailureMarker {
                stage: "greedy".into(),
                message: reason,
                iteration: Some(iteration),
            });
            a.greedy = Some(*run);
            true
        }
        Err(e) => return Err(e),
    };
    if let Some(run) = &a.greedy {
        let rows: Vec<Vec<String>> = run
            .records
            .iter()
            .map(|r| {
                vec![
                    r.k.to_string(),
                    r.winner_term.to_string(),
                    fmt_f64(r.f_max),
                ]
            })
            .collect();
        write_text(&out.join("greedy.csv"), &table_csv(&["k", "winner", "f_max"], &rows))?;
        info!("greedy: {} controls, stopped by {:?}", run.controls.len(), run.stopped_by);
    }
    a.save(out)?;
    Ok(Outcome { artifact: a, partial })
}

/// Synthetic data, identification and the derived geometry for one set of
/// controls.
pub struct IdentifyProducts {
    pub record: IdentificationRecord,
    pub sets: Vec<SolutionSet>,
    pub error: ErrorField,
    pub data: Vec<VectorField2>,
}

pub fn identify_controls(
    cfg: &ExperimentConfig,
    basis: &MonomialBasis,
    controls: &[VectorField2],
) -> Result<IdentifyProducts> {
    let ctx = context(cfg)?;
    let truth = cfg.truth()?;
    let (data, reports) = generate_data(&ctx, &truth, controls)?;
    let id = identify(&ctx, controls, &data, basis, &cfg.identify_config())?;
    let (sets, square) = solution_sets(&data)?;
    let alpha = id.alpha.values();
    let error = error_field(&truth, alpha, basis, &square, cfg.analysis.error_lattice)?;
    let record = IdentificationRecord {
        truth: cfg.model.truth.clone(),
        terms: basis.terms().iter().map(|m| m.to_string()).collect(),
        alpha: alpha.to_vec(),
        value: id.value,
        value_at_zero: id.value_at_zero,
        projected_grad_norm: id.projected_grad_norm,
        iterations: id.iterations,
        converged: id.converged,
        line_search_failed: id.line_search_failed,
        data_converged: reports.iter().all(|r| r.converged),
        square,
        max_error_on_sets: max_abs_error_on_points(&truth, alpha, basis, &sets),
        max_error_on_square: error.max_abs(),
        collinearity: collinearity(sets.iter().flat_map(|s| s.points.iter())),
    };
    Ok(IdentifyProducts {
        record,
        sets,
        error,
        data,
    })
}

fn write_identify_outputs(cfg: &ExperimentConfig, p: &IdentifyProducts, basis: &MonomialBasis, out: &Path) -> Result<()> {
    let e = &p.error;
    write_text(
        &out.join("error_field.csv"),
        &matrix_csv("y1\\y2", &e.axis(0), &e.axis(1), &e.samples),
    )?;
    let rows: Vec<Vec<String>> = p
        .sets
        .iter()
        .flat_map(|s| {
            s.points
                .iter()
                .map(move |q| vec![s.control_index.to_string(), fmt_f64(q[0]), fmt_f64(q[1])])
        })
        .collect();
    write_text(&out.join("solution_sets.csv"), &table_csv(&["control", "y1", "y2"], &rows))?;
    let rows: Vec<Vec<String>> = basis
        .terms()
        .iter()
        .zip(&p.record.alpha)
        .map(|(m, a)| vec![m.to_string(), fmt_f64(*a)])
        .collect();
    write_text(&out.join("coefficients.csv"), &table_csv(&["monomial", "alpha"], &rows))?;
    if cfg.model.truth.closed_form().is_some() {
        write_taylor(cfg, &p.record, basis, out)?;
    }
    Ok(())
}

fn write_taylor(cfg: &ExperimentConfig, rec: &IdentificationRecord, basis: &MonomialBasis, out: &Path) -> Result<()> {
    let kind = rec.truth_closed_form()?;
    let table = taylor_error_table(kind, &rec.alpha, basis, cfg.analysis.taylor_max_index);
    let reach = table.keys().map(|m| m.p1.max(m.p2)).max().unwrap_or(0);
    let truth = kind.taylor_coeffs(reach);
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|(m, err)| {
            let fitted = basis.position_of(*m).map_or(0.0, |p| rec.alpha[p]);
            vec![
                m.to_string(),
                m.p1.to_string(),
                m.p2.to_string(),
                fmt_f64(truth[m]),
                fmt_f64(fitted),
                fmt_f64(*err),
            ]
        })
        .collect();
    write_text(
        &out.join("taylor.csv"),
        &table_csv(&["monomial", "i1", "i2", "taylor", "identified", "abs_error"], &rows),
    )
}

impl IdentificationRecord {
    pub fn truth_closed_form(&self) -> Result<crate::nonlinearity::ClosedForm> {
        self.truth.closed_form().ok_or_else(|| {
            Error::invalid("Taylor tables need a closed-form truth (bilinear, sinusoidal or exponential)")
        })
    }
}

fn run_identify(a: &mut RunArtifact, out: &Path) -> Result<bool> {
    let cfg = a.config.clone();
    let basis = artifact_basis(a)?;
    let controls = a.controls()?.to_vec();
    info!("identify: {} controls, K={}", controls.len(), basis.len());
    let p = timed(a, "identify", || identify_controls(&cfg, &basis, &controls))?;
    write_identify_outputs(&cfg, &p, &basis, out)?;
    let partial = !(p.record.converged && p.record.data_converged);
    info!(
        "identify: value {:.3e}, max error on sets {:.3e}, on square {:.3e}",
        p.record.value, p.record.max_error_on_sets, p.record.max_error_on_square
    );
    a.identification = Some(p.record);
    Ok(partial)
}

/// Identification on the controls stored in `dir`, optionally with another
/// truth; outputs go to the same directory.
pub fn cmd_identify(dir: &Path, truth: Option<TruthConfig>) -> Result<Outcome> {
    let mut a = RunArtifact::load(dir)?;
    a.controls()?;
    if let Some(t) = truth {
        a.config.model.truth = t;
        a.config.validate()?;
    }
    let partial = run_identify(&mut a, dir)?;
    a.save(dir)?;
    Ok(Outcome { artifact: a, partial })
}

/// Identification from `count` random spatially constant controls.
pub fn cmd_baseline(cfg: &ExperimentConfig, out: &Path, count: Option<usize>) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    if let Some(c) = count {
        cfg.baseline.count = c;
    }
    cfg.validate()?;
    let controls = random_constant_controls(
        cfg.baseline.count,
        &cfg.control_box()?,
        cfg.baseline_seed(),
        cfg.baseline.mode,
        cfg.grid()?,
    )?;
    let mut a = RunArtifact::new(cfg, "baseline");
    a.controls = Some(controls);
    let partial = run_identify(&mut a, out)?;
    a.save(out)?;
    Ok(Outcome { artifact: a, partial })
}

/// Objective slice over two coefficients around the identified ones, plus the
/// finite-difference Hessian there.
pub fn cmd_landscape(dir: &Path, pair: Option<[String; 2]>) -> Result<Outcome> {
    let mut a = RunArtifact::load(dir)?;
    if let Some(p) = pair {
        a.config.landscape.pair = p;
        a.config.validate()?;
    }
    let rec = a
        .identification
        .clone()
        .ok_or_else(|| Error::InvalidArtifact("no identification stored; run identify first".into()))?;
    let cfg = a.config.clone();
    let basis = artifact_basis(&a)?;
    let idx = cfg.landscape_positions(&basis)?;
    let controls = a.controls()?.to_vec();
    let ctx = context(&cfg)?;
    let (data, _) = generate_data(&ctx, &cfg.truth()?, &controls)?;
    let center = [rec.alpha[idx[0]], rec.alpha[idx[1]]];
    let lattice = Lattice::centered(center, cfg.landscape.radius, cfg.landscape.points, cfg.model.alpha_max);
    let scan = timed(&mut a, "landscape", || {
        landscape_scan(&ctx, &controls, &data, &basis, &rec.alpha, idx, &lattice, cfg.model.alpha_max)
    })?;
    let f = |x: [f64; 2]| {
        let mut al = rec.alpha.clone();
        al[idx[0]] = x[0];
        al[idx[1]] = x[1];
        identification_objective(&ctx, &basis, &al, &controls, &data).map(|e| e.value)
    };
    let hessian = fd_hessian_2d(f, center, cfg.landscape.hessian_step)?;
    let names = [basis.term(idx[0]).to_string(), basis.term(idx[1]).to_string()];
    write_text(
        &dir.join("landscape.csv"),
        &matrix_csv(&format!("{}\\{}", names[0], names[1]), &scan.axes[0], &scan.axes[1], &scan.values),
    )?;
    let missing = scan.values.iter().flatten().filter(|v| v.is_nan()).count();
    let record = LandscapeRecord {
        pair: names,
        center,
        hessian,
        min_eigenvalue: min_eigenvalue_2x2(hessian),
        lattice_min: scan.argmin().map_or(f64::NAN, |m| m.2),
        missing_samples: missing,
    };
    info!("landscape: Hessian min eigenvalue {:.6e}", record.min_eigenvalue);
    a.landscape = Some(record);
    a.save(dir)?;
    Ok(Outcome {
        artifact: a,
        partial: missing > 0,
    })
}

/// Rewrites the Taylor table of a stored identification.
pub fn cmd_taylor(dir: &Path) -> Result<Outcome> {
    let a = RunArtifact::load(dir)?;
    let rec = a
        .identification
        .as_ref()
        .ok_or_else(|| Error::InvalidArtifact("no identification stored; run identify first".into()))?;
    write_taylor(&a.config, rec, &artifact_basis(&a)?, dir)?;
    Ok(Outcome { artifact: a, partial: false })
}

/// Ratio statistics for `k = 1..=min(k_max, K)` under the constant control `eps_b`.
pub fn stability_records(cfg: &ExperimentConfig) -> Result<Vec<StabilityRecord>> {
    let ctx = context(cfg)?;
    let basis = cfg.basis()?;
    let control = VectorField2::constant(*ctx.grid(), cfg.model.eps_b);
    (1..=cfg.stability.k_max.min(basis.len()))
        .map(|k| {
            let r = stability_probe(&ctx, &basis, &control, &cfg.stability_config(k))?;
            Ok(StabilityRecord {
                k,
                pairs_used: r.pairs_used,
                skipped_equal: r.skipped_equal,
                skipped_failed: r.skipped_failed,
                h1: r.h1,
                y: r.y,
                inverse: r.inverse,
            })
        })
        .collect()
}

pub fn cmd_stability_probe(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let mut a = match RunArtifact::load(out) {
        Ok(existing) => existing,
        Err(_) => RunArtifact::new(cfg.clone(), "none"),
    };
    let recs = timed(&mut a, "stability", || stability_records(cfg))?;
    let rows: Vec<Vec<String>> = recs
        .iter()
        .map(|r| {
            let mut row = vec![r.k.to_string(), r.pairs_used.to_string()];
            for s in [&r.h1, &r.y, &r.inverse] {
                row.push(fmt_f64(s.max));
                row.push(fmt_f64(s.median));
            }
            row.push(r.inverse.unbounded.to_string());
            row
        })
        .collect();
    write_text(
        &out.join("stability.csv"),
        &table_csv(
            &["k", "pairs", "h1_max", "h1_median", "y_max", "y_median", "inv_max", "inv_median", "inv_unbounded"],
            &rows,
        ),
    )?;
    let partial = recs.iter().any(|r| r.skipped_failed > 0 || r.inverse.unbounded > 0);
    a.stability = Some(recs);
    a.save(out)?;
    Ok(Outcome { artifact: a, partial })
}

/// Forward-solver check on the constructed control: discrete `L^2` errors on
/// `n, 2n, 4n` cells and their successive ratios.
pub fn manufactured_convergence(cfg: &ExperimentConfig, eta: f64, theta: f64, n: usize) -> Result<ManufacturedReport> {
    use crate::forward::solve_semilinear;
    use crate::grid::{Grid, LaplaceOperator, ScalarField};
    use crate::nonlinearity::{ClosedForm, NonlinearitySpec};
    use std::f64::consts::PI;
    let coupling = cfg.coupling()?;
    let mut errors = Vec::new();
    for cells in [n, 2 * n, 4 * n] {
        let g = Grid::new(cells, cfg.grid.x_max)?;
        let op = LaplaceOperator::new(g)?;
        let spec = NonlinearitySpec::closed_form(ClosedForm::Bilinear, coupling);
        let eps = constructed_control(eta, theta, coupling.gamma1(), coupling.gamma2(), g);
        let (y, _) = solve_semilinear(&op, &spec, &eps, &cfg.fixed_point())?;
        let kappa = |a: f64, b: f64| ((a + 1.0) * PI / 2.0).sin() * ((b + 1.0) * PI / 2.0).sin();
        let exact = VectorField2 {
            u1: ScalarField::from_fn(g, |a, b| eta * kappa(a, b)),
            u2: ScalarField::from_fn(g, |a, b| -theta * kappa(a, b)),
        };
        let d = y.sub(&exact);
        errors.push((cells, d.inner(&d).sqrt()));
    }
    let ratios = errors.windows(2).map(|w| w[0].1 / w[1].1).collect();
    Ok(ManufacturedReport { errors, ratios })
}

#[derive(Clone, Debug, Serialize)]
pub struct ManufacturedReport {
    pub errors: Vec<(usize, f64)>,
    pub ratios: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
struct AllSummary {
    greedy_controls: usize,
    greedy_min_eigenvalue: f64,
    baseline_min_eigenvalue: f64,
    convexification_ratio: f64,
    baseline_collinearity: f64,
    manufactured: ManufacturedReport,
}

/// Full chain: greedy, identify, landscape and Taylor on the greedy controls;
/// the same on random constant controls under `baseline/`; stability probes;
/// and the manufactured-solution check.
pub fn cmd_all(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let mut partial = cmd_greedy(cfg, out)?.partial;
    partial |= cmd_identify(out, None)?.partial;
    let g = cmd_landscape(out, None)?;
    partial |= g.partial;
    let base_dir = out.join("baseline");
    partial |= cmd_baseline(cfg, &base_dir, None)?.partial;
    let b = cmd_landscape(&base_dir, None)?;
    partial |= b.partial;
    partial |= cmd_stability_probe(cfg, out)?.partial;
    let manufactured = manufactured_convergence(cfg, 0.5, 1.0, 16)?;

    let eig = |o: &Outcome| o.artifact.landscape.as_ref().map_or(f64::NAN, |l| l.min_eigenvalue);
    let summary = AllSummary {
        greedy_controls: g.artifact.controls()?.len(),
        greedy_min_eigenvalue: eig(&g),
        baseline_min_eigenvalue: eig(&b),
        convexification_ratio: eig(&g) / eig(&b),
        baseline_collinearity: b.artifact.identification.as_ref().map_or(f64::NAN, |r| r.collinearity),
        manufactured,
    };
    write_json(&out.join("summary.json"), &summary)?;
    let artifact = RunArtifact::load(out)?;
    Ok(Outcome { artifact, partial })
}
