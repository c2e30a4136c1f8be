use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{norms, VectorField2};
use crate::nonlinearity::{MonomialBasis, NonlinearitySpec};
use crate::objectives::SolverContext;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    /// Number of leading coefficients drawn at random; the rest stay zero.
    pub k: usize,
    pub samples: usize,
    pub seed: u64,
    pub alpha_max: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            k: 3,
            samples: 50,
            seed: 0,
            alpha_max: 1.0,
        }
    }
}

/// Empirical statistics of one ratio family. `unbounded` counts pairs whose
/// ratio had a zero denominator on the state side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub max: f64,
    pub median: f64,
    pub count: usize,
    pub unbounded: usize,
}

impl RatioStats {
    fn from_samples(mut v: Vec<f64>, unbounded: usize) -> Self {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = match n {
            0 => f64::NAN,
            _ if n % 2 == 1 => v[n / 2],
            _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
        };
        Self {
            max: v.last().copied().unwrap_or(f64::NAN),
            median,
            count: n,
            unbounded,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub k: usize,
    pub pairs_used: usize,
    pub skipped_equal: usize,
    pub skipped_failed: usize,
    /// `||y1 - y2||_{H^1} / ||a1 - a2||_inf`.
    pub h1: RatioStats,
    /// `||y1 - y2||_Y / ||a1 - a2||_inf` with the graph norm `||-Delta_h u||`.
    pub y: RatioStats,
    /// `||a1 - a2||_inf / ||y1 - y2||_Y`.
    pub inverse: RatioStats,
}

fn draw_pairs(cfg: &StabilityConfig, len: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let mut a = vec![0.0; len];
        for v in a.iter_mut().take(cfg.k) {
            *v = rng.random_range(0.0..=cfg.alpha_max);
        }
        a
    };
    (0..cfg.samples)
        .map(|_| {
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            (a, b)
        })
        .collect()
}

enum PairOutcome {
    Equal,
    Failed,
    Ratios { h1: f64, y: f64, dalpha: f64 },
}

/// Lipschitz ratios of the coefficient-to-state map under one control for
/// random coefficient pairs in the `k`-restricted set.
pub fn stability_probe(
    ctx: &SolverContext,
    basis: &MonomialBasis,
    control: &VectorField2,
    cfg: &StabilityConfig,
) -> Result<StabilityReport> {
    if cfg.samples < 2 {
        return Err(Error::invalid("stability probe needs at least 2 samples"));
    }
    if cfg.k == 0 || cfg.k > basis.len() {
        return Err(Error::invalid(format!(
            "k = {} must lie in 1..={}",
            cfg.k,
            basis.len()
        )));
    }
    let pairs = draw_pairs(cfg, basis.len());
    let outcomes: Vec<PairOutcome> = pairs
        .par_iter()
        .map(|(a, b)| {
            let dalpha = a
                .iter()
                .zip(b)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            if dalpha == 0.0 {
                return PairOutcome::Equal;
            }
            let solve = |c: &[f64]| {
                NonlinearitySpec::basis_combo(basis, c, ctx.coupling)
                    .and_then(|spec| ctx.state(&spec, control))
            };
            match (solve(a), solve(b)) {
                (Ok(ya), Ok(yb)) => {
                    let n = norms(&ctx.op, &ya.sub(&yb));
                    PairOutcome::Ratios {
                        h1: n.h1,
                        y: n.laplace,
                        dalpha,
                    }
                }
                _ => PairOutcome::Failed,
            }
        })
        .collect();

    let (mut h1, mut y, mut inv) = (Vec::new(), Vec::new(), Vec::new());
    let (mut equal, mut failed, mut unbounded) = (0, 0, 0);
    for o in outcomes {
        match o {
            PairOutcome::Equal => equal += 1,
            PairOutcome::Failed => failed += 1,
            PairOutcome::Ratios {
                h1: dh1,
                y: dy,
                dalpha,
            } => {
                h1.push(dh1 / dalpha);
                y.push(dy / dalpha);
                if dy > 0.0 {
                    inv.push(dalpha / dy);
                } else {
                    unbounded += 1;
                }
            }
        }
    }
    let used = h1.len();
    Ok(StabilityReport {
        k: cfg.k,
        pairs_used: used,
        skipped_equal: equal,
        skipped_failed: failed,
        h1: RatioStats::from_samples(h1, 0),
        y: RatioStats::from_samples(y, 0),
        inverse: RatioStats::from_samples(inv, unbounded),
    })
}
