//! Run artifact directory: a JSON record of one experiment plus CSV matrices.
//!
//! CSV files are comma separated with a header row. Numbers are written with
//! 17 significant digits so doubles round-trip exactly; NaN is `nan`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{RatioStats, Square};
use crate::config::{ExperimentConfig, TruthConfig};
use crate::error::{Error, Result};
use crate::greedy::GreedyRun;
use crate::grid::{ScalarField, VectorField2};

pub const ARTIFACT_FILE: &str = "artifact.json";

/// Marks a stage that ended early; the artifact holds whatever finished.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureMarker {
    pub stage: String,
    pub message: String,
    pub iteration: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentificationRecord {
    pub truth: TruthConfig,
    pub terms: Vec<String>,
    pub alpha: Vec<f64>,
    pub value: f64,
    pub value_at_zero: f64,
    pub projected_grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    pub data_converged: bool,
    pub square: Square,
    pub max_error_on_sets: f64,
    pub max_error_on_square: f64,
    pub collinearity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeRecord {
    pub pair: [String; 2],
    pub center: [f64; 2],
    pub hessian: [[f64; 2]; 2],
    pub min_eigenvalue: f64,
    pub lattice_min: f64,
    pub missing_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub k: usize,
    pub pairs_used: usize,
    pub skipped_equal: usize,
    pub skipped_failed: usize,
    pub h1: RatioStats,
    pub y: RatioStats,
    pub inverse: RatioStats,
}

/// Everything one subcommand chain produced, self-contained enough to rerun
/// identification from the stored controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub tool_version: String,
    pub config: ExperimentConfig,
    /// Origin of the controls: `greedy` or `baseline`.
    pub controls_source: String,
    pub greedy: Option<GreedyRun>,
    /// Controls used for identification when they did not come from greedy.
    pub controls: Option<Vec<VectorField2>>,
    pub failure: Option<FailureMarker>,
    pub identification: Option<IdentificationRecord>,
    pub landscape: Option<LandscapeRecord>,
    pub stability: Option<Vec<StabilityRecord>>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunArtifact {
    pub fn new(config: ExperimentConfig, controls_source: &str) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            controls_source: controls_source.to_string(),
            greedy: None,
            controls: None,
            failure: None,
            identification: None,
            landscape: None,
            stability: None,
            timings: BTreeMap::new(),
        }
    }

    /// Controls for identification: explicit ones first, then greedy's.
    pub fn controls(&self) -> Result<&[VectorField2]> {
        let c = match (&self.controls, &self.greedy) {
            (Some(c), _) => c.as_slice(),
            (None, Some(g)) => g.controls.as_slice(),
            (None, None) => &[],
        };
        if c.is_empty() {
            return Err(Error::InvalidArtifact("artifact holds no controls".into()));
        }
        Ok(c)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(ARTIFACT_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads `dir/artifact.json` (or the file itself) and checks consistency.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(ARTIFACT_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let a: Self = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArtifact(format!("{}: {e}", file.display())))?;
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let bad = |m: String| Err(Error::InvalidArtifact(m));
        let grid = self.config.grid()?;
        if let Some(g) = &self.greedy {
            g.basis
                .validate()
                .map_err(|e| Error::InvalidArtifact(format!("greedy basis: {e}")))?;
            if g.grid != grid {
                return bad("greedy grid differs from the configured grid".into());
            }
        }
        let all = self
            .controls
            .iter()
            .flatten()
            .chain(self.greedy.iter().flat_map(|g| g.controls.iter()));
        for (m, c) in all.enumerate() {
            for u in [&c.u1, &c.u2] {
                if *u.grid() != grid || ScalarField::from_values(grid, u.values().to_vec()).is_err() {
                    return bad(format!("control {m} does not fit the configured grid"));
                }
            }
        }
        Ok(())
    }
}

/// Fixed-width rendering used in every CSV file.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    match s.trim() {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t
            .parse()
            .map_err(|_| Error::invalid(format!("not a number: {t:?}"))),
    }
}

/// Matrix with axis headers: the first row lists `col_axis`, every further
/// row starts with its `row_axis` value.
pub fn matrix_csv(corner: &str, row_axis: &[f64], col_axis: &[f64], values: &[Vec<f64>]) -> String {
    let mut s = String::from(corner);
    for c in col_axis {
        let _ = write!(s, ",{}", fmt_f64(*c));
    }
    s.push('\n');
    for (r, row) in row_axis.iter().zip(values) {
        s.push_str(&fmt_f64(*r));
        for v in row {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

/// `(row_axis, col_axis, values)` of a matrix CSV.
pub type MatrixCsv = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

/// Inverse of [`matrix_csv`].
pub fn parse_matrix_csv(text: &str) -> Result<MatrixCsv> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::invalid("empty CSV"))?;
    let cols = header
        .split(',')
        .skip(1)
        .map(parse_f64)
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let mut cells = line.split(',').map(parse_f64);
        rows.push(cells.next().ok_or_else(|| Error::invalid("empty CSV row"))??);
        let v = cells.collect::<Result<Vec<_>>>()?;
        if v.len() != cols.len() {
            return Err(Error::invalid("ragged CSV matrix"));
        }
        values.push(v);
    }
    Ok((rows, cols, values))
}

/// Plain table; cells are written as given.
pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    write_text(path, &text)
}
