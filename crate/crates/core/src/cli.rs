//! Command implementations behind the `btl` binary: fitting a single data
//! file, config-driven sweeps, and figure presets. Every command validates
//! its whole input before doing any numerical work.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{EstimatorKind, EstimatorSpec, FitError, FitResult, SolverSettings};
use crate::model::{
    make_true_params, ComparisonData, ModelError, ObservationDesign, ParameterFamily,
    TrueParameterFamily,
};
use crate::montecarlo::{
    item_rows, sweep, write_csv, CellOutcome, McError, SummaryRow, SweepCell,
};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const ERRORS_FILE: &str = "errors.csv";
pub const OPTIMAL_BOUND_FILE: &str = "optimal_bound.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{}", .0)]
    Fit(#[from] FitError),
    #[error(transparent)]
    MonteCarlo(#[from] McError),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 0 success, 1 computation error, 2 usage or configuration error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            _ => 1,
        }
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io { path: path.to_path_buf(), source }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::Usage(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(clap::ValueEnum)]
pub enum KindArg {
    Standard,
    Stretched,
    Unconstrained,
}

/// Fits one estimator to a JSON comparison file.
///
/// `bound` is `B` for the standard MLE and `A` for the stretched MLE
/// (default 2); `true_bound` is the `B` the stretched bound must exceed.
pub fn cmd_fit(
    input: &Path,
    kind: KindArg,
    bound: Option<f64>,
    true_bound: f64,
) -> Result<FitResult, CliError> {
    let text = fs::read_to_string(input).map_err(CliError::io(input))?;
    let data: ComparisonData = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("malformed comparison file {}: {e}", input.display())))?;
    let kind = match kind {
        KindArg::Standard => EstimatorKind::Standard { b: bound.unwrap_or(true_bound) },
        KindArg::Stretched => EstimatorKind::Stretched { a: bound.unwrap_or(2.0), b: true_bound },
        KindArg::Unconstrained => EstimatorKind::Unconstrained,
    };
    let spec = EstimatorSpec::new(kind, SolverSettings::default())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec.fit(&data)?)
}

/// A `p_obs` grid entry: a fixed probability or `"inv_sqrt_d"` for `1/√d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PObs {
    Fixed(f64),
    Rule(PObsRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PObsRule {
    InvSqrtD,
}

impl PObs {
    fn resolve(&self, d: usize) -> f64 {
        match *self {
            Self::Fixed(p) => p,
            Self::Rule(PObsRule::InvSqrtD) => 1.0 / (d as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FamilyEntry {
    Named(String),
    Custom { custom: Vec<f64> },
}

impl FamilyEntry {
    fn resolve(&self) -> Result<ParameterFamily, CliError> {
        match self {
            Self::Named(name) => Ok(name.parse()?),
            Self::Custom { custom } => Ok(ParameterFamily::Custom(custom.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorEntry {
    /// Box at `B`.
    Standard,
    /// Box at each `A` of the grid; every `A` must exceed `B`.
    Stretched,
    Unconstrained,
    /// Box at each `A` of the grid, reported as standard when `A <= B`.
    Bounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub d: Vec<usize>,
    pub k: Vec<u32>,
    /// `null` selects the league design.
    #[serde(default)]
    pub p_obs: Option<Vec<PObs>>,
    #[serde(rename = "A", default)]
    pub a: Vec<f64>,
    pub families: Vec<FamilyEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: GridConfig,
    pub estimators: Vec<EstimatorEntry>,
    pub n_iters: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(rename = "B", default = "default_b")]
    pub b: f64,
    #[serde(default)]
    pub solver: SolverSettings,
}

fn default_b() -> f64 {
    1.0
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid sweep config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_json(&fs::read_to_string(path).map_err(CliError::io(path))?)
    }

    /// Expands the grid into cells (order: d, k, p_obs, family, estimator, A),
    /// rejecting any invalid combination up front.
    pub fn cells(&self) -> Result<Vec<SweepCell>, CliError> {
        let usage = |msg: String| Err(CliError::Usage(msg));
        let g = &self.grid;
        if g.d.is_empty() || g.k.is_empty() || g.families.is_empty() || self.estimators.is_empty() {
            return usage("grid.d, grid.k, grid.families and estimators must be nonempty".into());
        }
        if matches!(&g.p_obs, Some(p) if p.is_empty()) {
            return usage("grid.p_obs must be null or nonempty".into());
        }
        if self.n_iters < 2 {
            return usage(format!("n_iters must be at least 2, got {}", self.n_iters));
        }
        if !(self.b.is_finite() && self.b > 0.0) {
            return usage(format!("B must be positive, got {}", self.b));
        }
        self.solver.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let needs_a = self
            .estimators
            .iter()
            .any(|e| matches!(e, EstimatorEntry::Stretched | EstimatorEntry::Bounded));
        if needs_a && g.a.is_empty() {
            return usage("grid.A must be nonempty for stretched or bounded estimators".into());
        }
        let families = g.families.iter().map(FamilyEntry::resolve).collect::<Result<Vec<_>, _>>()?;

        let mut kinds = Vec::new();
        for est in &self.estimators {
            match est {
                EstimatorEntry::Standard => kinds.push(EstimatorKind::Standard { b: self.b }),
                EstimatorEntry::Unconstrained => kinds.push(EstimatorKind::Unconstrained),
                EstimatorEntry::Stretched => {
                    kinds.extend(g.a.iter().map(|&a| EstimatorKind::Stretched { a, b: self.b }))
                }
                EstimatorEntry::Bounded => kinds.extend(g.a.iter().map(|&a| {
                    if a > self.b {
                        EstimatorKind::Stretched { a, b: self.b }
                    } else {
                        EstimatorKind::Standard { b: a }
                    }
                })),
            }
        }
        let estimators = kinds
            .into_iter()
            .map(|kind| EstimatorSpec::new(kind, self.solver))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Usage(e.to_string()))?;

        let mut cells = Vec::new();
        for &d in &g.d {
            for &k in &g.k {
                let designs = match &g.p_obs {
                    None => vec![ObservationDesign::league(k)?],
                    Some(ps) => ps
                        .iter()
                        .map(|p| ObservationDesign::random(k, p.resolve(d)))
                        .collect::<Result<_, _>>()?,
                };
                for design in designs {
                    for family in &families {
                        let family = TrueParameterFamily::new(family.clone(), self.b);
                        make_true_params(&family, d)?;
                        for estimator in &estimators {
                            cells.push(SweepCell { d, design, estimator: *estimator, family: family.clone() });
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

pub const FIGURES: [u8; 6] = [1, 3, 4, 5, 6, 7];
const D_GRID: [usize; 4] = [10, 25, 50, 100];
const K_GRID: [u32; 7] = [1, 2, 5, 10, 20, 50, 100];

fn a_grid() -> Vec<f64> {
    (0..=10).map(|i| 0.5 + 0.25 * f64::from(i)).collect()
}

/// Settings behind each reproducible figure; `iters` overrides the iteration count.
pub fn figure_config(n: u8, iters: Option<usize>, seed: u64, out_dir: PathBuf) -> Result<SweepConfig, CliError> {
    let named = |names: &[&str]| names.iter().map(|s| FamilyEntry::Named(s.to_string())).collect();
    let pair = vec![EstimatorEntry::Standard, EstimatorEntry::Stretched];
    let (grid, estimators, default_iters) = match n {
        1 => (
            GridConfig { d: vec![25], k: vec![5], p_obs: None, a: vec![2.0], families: named(&["linear"]) },
            pair,
            5000,
        ),
        3 => (
            GridConfig { d: D_GRID.to_vec(), k: vec![5], p_obs: None, a: vec![2.0], families: named(&["worst_case"]) },
            pair,
            10_000,
        ),
        4 => (
            GridConfig { d: vec![10], k: K_GRID.to_vec(), p_obs: None, a: vec![2.0], families: named(&["worst_case"]) },
            pair,
            10_000,
        ),
        5 => (
            GridConfig { d: vec![10], k: K_GRID.to_vec(), p_obs: None, a: a_grid(), families: named(&["worst_case"]) },
            vec![EstimatorEntry::Bounded],
            5000,
        ),
        6 => (
            GridConfig {
                d: vec![10],
                k: vec![5],
                p_obs: None,
                a: a_grid(),
                families: named(&["worst_case", "worst_case_half", "bipolar", "linear", "all_zeros"]),
            },
            vec![EstimatorEntry::Bounded],
            5000,
        ),
        7 => (
            GridConfig {
                d: D_GRID.to_vec(),
                k: vec![5],
                p_obs: Some(vec![PObs::Rule(PObsRule::InvSqrtD)]),
                a: vec![2.0],
                families: named(&["worst_case"]),
            },
            pair,
            10_000,
        ),
        other => {
            return Err(CliError::Usage(format!("unknown figure {other}; supported: {FIGURES:?}")))
        }
    };
    Ok(SweepConfig {
        grid,
        estimators,
        n_iters: iters.unwrap_or(default_iters),
        seed,
        out_dir,
        b: 1.0,
        solver: SolverSettings::default(),
    })
}

#[derive(Debug, Clone, Serialize)]
struct ErrorRow {
    cell: usize,
    d: usize,
    k: u32,
    p_obs: Option<f64>,
    family: String,
    estimator_kind: String,
    bound: Option<f64>,
    error: String,
}

/// Grid argmin of `max_abs_bias` over the box bound within one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalBoundRow {
    pub d: usize,
    pub k: u32,
    pub p_obs: Option<f64>,
    pub family: String,
    pub best_bound: f64,
    pub max_abs_bias: f64,
    pub max_abs_bias_se: f64,
}

pub fn optimal_bounds(rows: &[SummaryRow]) -> Vec<OptimalBoundRow> {
    let mut best: Vec<OptimalBoundRow> = Vec::new();
    for r in rows {
        let Some(bound) = r.bound else { continue };
        let same = |o: &OptimalBoundRow| o.d == r.d && o.k == r.k && o.p_obs == r.p_obs && o.family == r.family;
        match best.iter_mut().find(|o| same(o)) {
            Some(o) if r.max_abs_bias < o.max_abs_bias => {
                o.best_bound = bound;
                o.max_abs_bias = r.max_abs_bias;
                o.max_abs_bias_se = r.max_abs_bias_se;
            }
            Some(_) => {}
            None => best.push(OptimalBoundRow {
                d: r.d,
                k: r.k,
                p_obs: r.p_obs,
                family: r.family.clone(),
                best_bound: bound,
                max_abs_bias: r.max_abs_bias,
                max_abs_bias_se: r.max_abs_bias_se,
            }),
        }
    }
    best
}

/// What a sweep wrote.
#[derive(Debug)]
pub struct SweepOutput {
    pub outcomes: Vec<CellOutcome>,
    pub rows: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

pub fn item_file_name(cell: usize) -> String {
    format!("items_cell{cell:03}.csv")
}

/// Runs the sweep and writes `summary.csv` (one row per successful cell),
/// `items_cellNNN.csv` per successful cell, `errors.csv` when any cell
/// failed, and `optimal_bound.csv` for sweeps over the bound.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepOutput, CliError> {
    let cells = config.cells()?;
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let outcomes = sweep(&cells, config.n_iters, config.seed)?;

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut files = Vec::new();
    for (idx, o) in outcomes.iter().enumerate() {
        match (&o.result, &o.theta_star) {
            (Ok(report), Some(theta)) => {
                rows.push(SummaryRow::new(&o.cell, report, config.n_iters));
                let path = out.join(item_file_name(idx));
                let file = fs::File::create(&path).map_err(CliError::io(&path))?;
                write_csv(file, &item_rows(theta, report))?;
                files.push(path);
            }
            (result, _) => errors.push(ErrorRow {
                cell: idx,
                d: o.cell.d,
                k: o.cell.design.k(),
                p_obs: o.cell.design.p_obs(),
                family: o.cell.family.family.name().to_string(),
                estimator_kind: o.cell.estimator.kind.name().to_string(),
                bound: o.cell.estimator.kind.bound(),
                error: result.as_ref().err().map(ToString::to_string).unwrap_or_default(),
            }),
        }
    }
    let path = out.join(SUMMARY_FILE);
    write_csv(fs::File::create(&path).map_err(CliError::io(&path))?, &rows)?;
    files.insert(0, path);
    if config.estimators.contains(&EstimatorEntry::Bounded) {
        let path = out.join(OPTIMAL_BOUND_FILE);
        write_csv(fs::File::create(&path).map_err(CliError::io(&path))?, &optimal_bounds(&rows))?;
        files.push(path);
    }
    let err_path = out.join(ERRORS_FILE);
    if errors.is_empty() {
        if err_path.exists() {
            fs::remove_file(&err_path).map_err(CliError::io(&err_path))?;
        }
    } else {
        write_csv(fs::File::create(&err_path).map_err(CliError::io(&err_path))?, &errors)?;
        files.push(err_path);
    }
    Ok(SweepOutput { outcomes, rows, files })
}
