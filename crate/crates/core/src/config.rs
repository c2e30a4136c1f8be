//! Experiment configuration file (TOML, format version 1).
//!
//! Every key is optional; omitted keys take the defaults below. Unknown keys
//! are rejected. Optimizer sections list only the settings to change; the
//! rest come from the defaults of the stage they belong to.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{ConstantControlMode, IdentifyConfig, StabilityConfig};
use crate::error::{Error, Result};
use crate::forward::FixedPointConfig;
use crate::greedy::GreedyConfig;
use crate::grid::Grid;
use crate::nonlinearity::{ClosedForm, Coupling, Monomial, MonomialBasis, NonlinearitySpec};
use crate::objectives::{ControlBox, RegularizerSign};
use crate::optimizer::OptimConfig;
use crate::seeds::{derive_seed, tag};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Base seed for every stochastic component.
    pub seed: u64,
    /// Worker threads; 0 lets the runtime choose.
    pub threads: usize,
    pub output_dir: PathBuf,
    pub grid: GridSection,
    pub model: ModelSection,
    pub solver: SolverSection,
    pub greedy: GreedySection,
    pub identify: IdentifySection,
    pub baseline: BaselineSection,
    pub landscape: LandscapeSection,
    pub analysis: AnalysisSection,
    pub stability: StabilitySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: FORMAT_VERSION,
            seed: 0,
            threads: 0,
            output_dir: PathBuf::from("runs/default"),
            grid: GridSection::default(),
            model: ModelSection::default(),
            solver: SolverSection::default(),
            greedy: GreedySection::default(),
            identify: IdentifySection::default(),
            baseline: BaselineSection::default(),
            landscape: LandscapeSection::default(),
            analysis: AnalysisSection::default(),
            stability: StabilitySection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Cells per side.
    pub n: usize,
    /// Half-width of the square domain.
    pub x_max: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { n: 64, x_max: 1.0 }
    }
}

/// The nonlinearity that generates data: a closed-form name or a table of
/// monomial coefficients such as `{ "y1*y2" = 0.05 }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TruthConfig {
    Named(String),
    Terms(BTreeMap<String, f64>),
}

impl TruthConfig {
    pub fn closed_form(&self) -> Option<ClosedForm> {
        match self {
            TruthConfig::Named(s) => s.parse().ok(),
            TruthConfig::Terms(_) => None,
        }
    }

    pub fn to_spec(&self, coupling: Coupling) -> Result<NonlinearitySpec> {
        match self {
            TruthConfig::Named(s) => Ok(NonlinearitySpec::closed_form(s.parse()?, coupling)),
            TruthConfig::Terms(t) => {
                let terms = t
                    .keys()
                    .map(|k| k.parse::<Monomial>())
                    .collect::<Result<Vec<_>>>()?;
                let coeffs: Vec<f64> = t.values().copied().collect();
                if let Some(c) = coeffs.iter().find(|c| !c.is_finite()) {
                    return Err(Error::invalid(format!("truth coefficient {c} is not finite")));
                }
                let basis = MonomialBasis::from_terms(terms)?;
                NonlinearitySpec::basis_combo(&basis, &coeffs, coupling)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Largest total degree `P` of the identification basis.
    pub degree: i64,
    pub truth: TruthConfig,
    pub gamma1: f64,
    pub gamma2: f64,
    pub alpha_max: f64,
    pub eps_a: [f64; 2],
    pub eps_b: [f64; 2],
}

impl Default for ModelSection {
    fn default() -> Self {
        let b = ControlBox::default();
        Self {
            degree: 2,
            truth: TruthConfig::Named("bilinear".into()),
            gamma1: 0.2,
            gamma2: 0.2,
            alpha_max: 1.0,
            eps_a: b.eps_a,
            eps_b: b.eps_b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub lambda_a: f64,
    pub tol2: f64,
    pub ell_max: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let f = FixedPointConfig::default();
        Self {
            lambda_a: f.lambda_a,
            tol2: f.tol2,
            ell_max: f.ell_max,
        }
    }
}

/// Overrides applied on top of a stage's default optimizer settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_init: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub armijo_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shrink: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
}

impl OptimSection {
    pub fn apply(&self, base: OptimConfig) -> OptimConfig {
        OptimConfig {
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            grad_tol: self.grad_tol.unwrap_or(base.grad_tol),
            step_init: self.step_init.unwrap_or(base.step_init),
            armijo_c: self.armijo_c.unwrap_or(base.armijo_c),
            shrink: self.shrink.unwrap_or(base.shrink),
            memory: self.memory.unwrap_or(base.memory),
            restarts: self.restarts.unwrap_or(base.restarts),
            seed: base.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedySection {
    pub tol1: f64,
    pub nu: f64,
    pub regularizer_sign: RegularizerSign,
    pub control_optim: OptimSection,
    pub coeff_optim: OptimSection,
}

impl Default for GreedySection {
    fn default() -> Self {
        let g = GreedyConfig::default();
        Self {
            tol1: g.tol1,
            nu: g.nu,
            regularizer_sign: g.regularizer_sign,
            control_optim: OptimSection::default(),
            coeff_optim: OptimSection::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifySection {
    pub optim: OptimSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub count: usize,
    pub mode: ConstantControlMode,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            count: 19,
            mode: ConstantControlMode::Diagonal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeSection {
    /// The two monomials whose coefficients vary, e.g. `["y1^2", "y1*y2"]`.
    pub pair: [String; 2],
    /// Lattice points per axis.
    pub points: usize,
    /// Half-width of the lattice around the identified coefficients.
    pub radius: f64,
    /// Spacing of the finite-difference Hessian.
    pub hessian_step: f64,
}

impl Default for LandscapeSection {
    fn default() -> Self {
        Self {
            pair: ["y1^2".into(), "y1*y2".into()],
            points: 21,
            radius: 0.05,
            hessian_step: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Lattice points per side of the error field.
    pub error_lattice: usize,
    /// Largest single exponent listed in the Taylor table.
    pub taylor_max_index: u32,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            error_lattice: 101,
            taylor_max_index: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    /// Probes run for every `k` in `1..=k_max`, capped at the basis size.
    pub k_max: usize,
    pub samples: usize,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            k_max: 3,
            samples: 50,
        }
    }
}

fn collect<T>(out: &mut Vec<String>, field: &str, r: Result<T>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            out.push(format!("{field}: {}", strip_kind(&e)));
            None
        }
    }
}

fn strip_kind(e: &Error) -> String {
    match e {
        Error::InvalidArgument(m) => m.clone(),
        other => other.to_string(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut out = Vec::new();
        if self.version != FORMAT_VERSION {
            out.push(format!(
                "version: unsupported config version {}, expected {FORMAT_VERSION}",
                self.version
            ));
        }
        if self.seed > i64::MAX as u64 {
            out.push(format!("seed: must be <= {}", i64::MAX));
        }
        collect(&mut out, "grid", self.grid());
        let coupling = collect(&mut out, "model.gamma", self.coupling());
        collect(&mut out, "model.degree", self.basis());
        // The truth is checked even when the coupling is invalid.
        let probe = coupling.unwrap_or(Coupling::new(1.0, 1.0)?);
        collect(&mut out, "model.truth", self.model.truth.to_spec(probe));
        collect(&mut out, "model.eps", self.control_box());
        if !(self.model.alpha_max >= 0.0 && self.model.alpha_max.is_finite()) {
            out.push(format!("model.alpha_max: must be >= 0, got {}", self.model.alpha_max));
        }
        for p in self.fixed_point().problems().unwrap_or_default() {
            out.push(format!("solver: {p}"));
        }
        if !(self.greedy.tol1 > 0.0) {
            out.push(format!("greedy.tol1: must be > 0, got {}", self.greedy.tol1));
        }
        if !(self.greedy.nu >= 0.0 && self.greedy.nu.is_finite()) {
            out.push(format!("greedy.nu: must be >= 0, got {}", self.greedy.nu));
        }
        let g = self.greedy_config();
        for (name, o) in [("control_optim", g.control_optim), ("coeff_optim", g.coeff_optim)] {
            for p in o.problems().unwrap_or_default() {
                out.push(format!("greedy.{name}: {p}"));
            }
        }
        for p in self.identify_config().optim.problems().unwrap_or_default() {
            out.push(format!("identify.optim: {p}"));
        }
        if self.baseline.count == 0 {
            out.push("baseline.count: must be >= 1".into());
        }
        // Membership in the basis is checked when a landscape is scanned.
        for name in &self.landscape.pair {
            if let Err(e) = name.parse::<Monomial>() {
                out.push(format!("landscape.pair: {}", strip_kind(&e)));
            }
        }
        if self.landscape.pair[0] == self.landscape.pair[1] {
            out.push("landscape.pair: the two monomials must differ".into());
        }
        if self.landscape.points == 0 {
            out.push("landscape.points: must be >= 1".into());
        }
        if !(self.landscape.radius >= 0.0 && self.landscape.radius.is_finite()) {
            out.push(format!("landscape.radius: must be >= 0, got {}", self.landscape.radius));
        }
        if !(self.landscape.hessian_step > 0.0 && self.landscape.hessian_step.is_finite()) {
            out.push(format!(
                "landscape.hessian_step: must be > 0, got {}",
                self.landscape.hessian_step
            ));
        }
        if self.analysis.error_lattice < 2 {
            out.push(format!(
                "analysis.error_lattice: must be >= 2, got {}",
                self.analysis.error_lattice
            ));
        }
        if self.stability.samples < 2 {
            out.push("stability.samples: must be >= 2".into());
        }
        if self.stability.k_max == 0 {
            out.push("stability.k_max: must be >= 1".into());
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(out))
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.n, self.grid.x_max)
    }

    pub fn coupling(&self) -> Result<Coupling> {
        Coupling::new(self.model.gamma1, self.model.gamma2)
    }

    pub fn basis(&self) -> Result<MonomialBasis> {
        MonomialBasis::try_enumerate(self.model.degree)
    }

    pub fn truth(&self) -> Result<NonlinearitySpec> {
        self.model.truth.to_spec(self.coupling()?)
    }

    pub fn control_box(&self) -> Result<ControlBox> {
        ControlBox::new(self.model.eps_a, self.model.eps_b)
    }

    pub fn fixed_point(&self) -> FixedPointConfig {
        FixedPointConfig {
            lambda_a: self.solver.lambda_a,
            tol2: self.solver.tol2,
            ell_max: self.solver.ell_max,
        }
    }

    pub fn greedy_config(&self) -> GreedyConfig {
        let d = GreedyConfig::default();
        GreedyConfig {
            tol1: self.greedy.tol1,
            nu: self.greedy.nu,
            alpha_max: self.model.alpha_max,
            control_optim: self.greedy.control_optim.apply(d.control_optim),
            coeff_optim: self.greedy.coeff_optim.apply(d.coeff_optim),
            fp: self.fixed_point(),
            control_box: ControlBox {
                eps_a: self.model.eps_a,
                eps_b: self.model.eps_b,
            },
            regularizer_sign: self.greedy.regularizer_sign,
            seed: self.seed,
        }
    }

    pub fn identify_config(&self) -> IdentifyConfig {
        let d = IdentifyConfig::default();
        let mut optim = self.identify.optim.apply(d.optim);
        optim.seed = derive_seed(self.seed, &[tag::IDENTIFY]);
        IdentifyConfig {
            alpha_max: self.model.alpha_max,
            optim,
        }
    }

    pub fn baseline_seed(&self) -> u64 {
        derive_seed(self.seed, &[tag::BASELINE])
    }

    pub fn stability_config(&self, k: usize) -> StabilityConfig {
        StabilityConfig {
            k,
            samples: self.stability.samples,
            seed: derive_seed(self.seed, &[tag::STABILITY, k as u64]),
            alpha_max: self.model.alpha_max,
        }
    }

    /// Basis positions of the landscape pair.
    pub fn landscape_positions(&self, basis: &MonomialBasis) -> Result<[usize; 2]> {
        let pos = |s: &str| {
            let m: Monomial = s.parse()?;
            basis
                .position_of(m)
                .ok_or_else(|| Error::Config(vec![format!("landscape.pair: {m} is not in the degree {} basis", basis.degree())]))
        };
        Ok([pos(&self.landscape.pair[0])?, pos(&self.landscape.pair[1])?])
    }
}
