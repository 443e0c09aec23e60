//! Monte-Carlo estimates of per-item bias and mean squared error at a fixed
//! ground truth, grid sweeps over simulation settings, and log-log rate fits.
//!
//! Iteration `t` of a run draws its data from substream `t` of the master
//! seed, so results do not depend on how iterations are spread over threads.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{EstimatorSpec, FitError};
use crate::graph::{build_comparison_graph, is_connected_undirected};
use crate::model::{
    make_true_params, sample_comparisons, substream_seed, ModelError, ObservationDesign,
    ParameterVector, TrueParameterFamily,
};

/// Largest tolerated fraction of fits that fail (non-convergence or no finite optimum).
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("need at least 2 iterations, got {0}")]
    TooFewIterations(usize),
    #[error("AllIterationsDiscarded: every sampled comparison graph was disconnected")]
    AllIterationsDiscarded,
    #[error("TooManyFailures: {failed} of {attempted} fits failed (first: {first})")]
    TooManyFailures { failed: usize, attempted: usize, first: FitError },
    #[error("empty sweep grid")]
    EmptyGrid,
    #[error("rate fit needs at least 3 points spanning a factor of 4: {0}")]
    InsufficientPoints(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `mean(θ̂_i) - θ*_i`.
    pub per_item_bias: Vec<f64>,
    pub per_item_bias_se: Vec<f64>,
    pub max_abs_bias: f64,
    /// Standard error of the item attaining `max_abs_bias`.
    pub max_abs_bias_se: f64,
    /// `mean ||θ̂ - θ*||²`.
    pub mse: f64,
    pub mse_se: f64,
    pub iterations_run: usize,
    pub iterations_discarded: usize,
    pub iterations_failed: usize,
    pub clipping_frequency: f64,
}

impl MetricsReport {
    pub fn argmax_abs_bias(&self) -> usize {
        self.per_item_bias
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) })
            .0
    }
}

enum Outcome {
    Discarded,
    Failed(FitError),
    Fitted { theta: Vec<f64>, clipped: bool },
}

fn run_iteration(
    theta_star: &ParameterVector,
    design: &ObservationDesign,
    estimator: &EstimatorSpec,
    seed: u64,
) -> Result<Outcome, McError> {
    let data = sample_comparisons(theta_star, design, seed)?;
    if design.is_random() && !is_connected_undirected(&build_comparison_graph(&data)) {
        return Ok(Outcome::Discarded);
    }
    Ok(match estimator.fit(&data) {
        Ok(fit) => Outcome::Fitted { clipped: fit.constraint_active, theta: fit.theta_hat.into_inner() },
        Err(e @ (FitError::MaxItersExceeded { .. } | FitError::NotStronglyConnected)) => Outcome::Failed(e),
        Err(e) => return Err(e.into()),
    })
}

/// Mean and standard error of the mean (sample std with `n - 1`).
fn mean_and_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt())
}

/// Runs `n_iters` simulate-and-fit rounds at `theta_star`. Random designs
/// whose observation graph is disconnected are discarded; fits that fail are
/// counted and tolerated up to [`MAX_FAILURE_FRACTION`].
pub fn run_monte_carlo(
    theta_star: &ParameterVector,
    design: &ObservationDesign,
    estimator: &EstimatorSpec,
    n_iters: usize,
    master_seed: u64,
) -> Result<MetricsReport, McError> {
    if n_iters < 2 {
        return Err(McError::TooFewIterations(n_iters));
    }
    design.validate()?;
    estimator.kind.validate()?;
    estimator.settings.validate()?;

    let outcomes = (0..n_iters as u64)
        .into_par_iter()
        .map(|t| run_iteration(theta_star, design, estimator, substream_seed(master_seed, t)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut discarded = 0;
    let mut failures = Vec::new();
    let mut fits = Vec::with_capacity(outcomes.len());
    let mut clipped = 0usize;
    for o in outcomes {
        match o {
            Outcome::Discarded => discarded += 1,
            Outcome::Failed(e) => failures.push(e),
            Outcome::Fitted { theta, clipped: c } => {
                clipped += usize::from(c);
                fits.push(theta);
            }
        }
    }
    let attempted = n_iters - discarded;
    if attempted == 0 {
        return Err(McError::AllIterationsDiscarded);
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * attempted as f64 || fits.is_empty() {
        return Err(McError::TooManyFailures {
            failed: failures.len(),
            attempted,
            first: failures.swap_remove(0),
        });
    }

    let n = fits.len();
    let truth = theta_star.values();
    let (per_item_bias, per_item_bias_se): (Vec<f64>, Vec<f64>) = (0..truth.len())
        .map(|i| {
            let (mean, se) = mean_and_se(fits.iter().map(|f| f[i]), n);
            (mean - truth[i], se)
        })
        .unzip();
    let sq_err = fits
        .iter()
        .map(|f| f.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
    let (mse, mse_se) = mean_and_se(sq_err, n);

    let mut report = MetricsReport {
        max_abs_bias: 0.0,
        max_abs_bias_se: 0.0,
        per_item_bias,
        per_item_bias_se,
        mse,
        mse_se,
        iterations_run: n,
        iterations_discarded: discarded,
        iterations_failed: failures.len(),
        clipping_frequency: clipped as f64 / n as f64,
    };
    let arg = report.argmax_abs_bias();
    report.max_abs_bias = report.per_item_bias[arg].abs();
    report.max_abs_bias_se = report.per_item_bias_se[arg];
    Ok(report)
}

/// One simulation setting of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub d: usize,
    pub design: ObservationDesign,
    pub estimator: EstimatorSpec,
    pub family: TrueParameterFamily,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub cell: SweepCell,
    pub theta_star: Option<ParameterVector>,
    pub result: Result<MetricsReport, McError>,
}

/// Runs every cell with seed `substream_seed(master_seed, cell index)`.
/// Errors stay attached to their cell.
pub fn sweep(grid: &[SweepCell], n_iters: usize, master_seed: u64) -> Result<Vec<CellOutcome>, McError> {
    if grid.is_empty() {
        return Err(McError::EmptyGrid);
    }
    Ok(grid
        .iter()
        .enumerate()
        .map(|(idx, cell)| {
            let theta_star = make_true_params(&cell.family, cell.d);
            let result = theta_star.clone().map_err(McError::from).and_then(|theta| {
                run_monte_carlo(
                    &theta,
                    &cell.design,
                    &cell.estimator,
                    n_iters,
                    substream_seed(master_seed, idx as u64),
                )
            });
            CellOutcome { cell: cell.clone(), theta_star: theta_star.ok(), result }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    MaxAbsBias,
    Mse,
}

impl Metric {
    pub fn of(&self, report: &MetricsReport) -> f64 {
        match self {
            Self::MaxAbsBias => report.max_abs_bias,
            Self::Mse => report.mse,
        }
    }
}

/// Least-squares slope of `log(metric)` against `log(x)`.
pub fn rate_slope(points: &[(f64, f64)]) -> Result<f64, McError> {
    if points.len() < 3 {
        return Err(McError::InsufficientPoints(format!("{} points", points.len())));
    }
    if let Some(p) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(McError::InsufficientPoints(format!("non-positive point {p:?}")));
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), (x, _)| (lo.min(*x), hi.max(*x)));
    if hi < 4.0 * lo {
        return Err(McError::InsufficientPoints(format!("x spans only [{lo}, {hi}]")));
    }
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Rate fit over reports keyed by the swept variable (`d` or `k`).
pub fn rate_slope_of(reports: &[(f64, &MetricsReport)], metric: Metric) -> Result<f64, McError> {
    let points: Vec<(f64, f64)> = reports.iter().map(|(x, r)| (*x, metric.of(r))).collect();
    rate_slope(&points)
}

/// One row of the sweep summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub d: usize,
    pub k: u32,
    pub p_obs: Option<f64>,
    pub family: String,
    pub estimator_kind: String,
    pub bound: Option<f64>,
    pub n_iters: usize,
    pub n_discarded: usize,
    pub max_abs_bias: f64,
    pub max_abs_bias_se: f64,
    pub mse: f64,
    pub mse_se: f64,
    pub clipping_frequency: f64,
    pub n_failed: usize,
}

impl SummaryRow {
    pub fn new(cell: &SweepCell, report: &MetricsReport, n_iters: usize) -> Self {
        Self {
            d: cell.d,
            k: cell.design.k(),
            p_obs: cell.design.p_obs(),
            family: cell.family.family.name().to_string(),
            estimator_kind: cell.estimator.kind.name().to_string(),
            bound: cell.estimator.kind.bound(),
            n_iters,
            n_discarded: report.iterations_discarded,
            max_abs_bias: report.max_abs_bias,
            max_abs_bias_se: report.max_abs_bias_se,
            mse: report.mse,
            mse_se: report.mse_se,
            clipping_frequency: report.clipping_frequency,
            n_failed: report.iterations_failed,
        }
    }
}

/// One item of a per-item bias table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub item_index: usize,
    pub theta_star: f64,
    pub bias: f64,
    pub se: f64,
}

pub fn item_rows(theta_star: &ParameterVector, report: &MetricsReport) -> Vec<ItemRow> {
    (0..theta_star.len())
        .map(|i| ItemRow {
            item_index: i,
            theta_star: theta_star[i],
            bias: report.per_item_bias[i],
            se: report.per_item_bias_se[i],
        })
        .collect()
}

pub fn write_csv<T: Serialize, W: Write>(writer: W, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>, R: Read>(reader: R) -> Result<Vec<T>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParameterFamily;
    use approx::assert_abs_diff_eq;

    fn league(k: u32) -> ObservationDesign {
        ObservationDesign::league(k).unwrap()
    }

    #[test]
    fn rate_slope_exact_power_laws() {
        let ds: [f64; 4] = [10.0, 25.0, 50.0, 100.0];
        let sqrt: Vec<(f64, f64)> = ds.iter().map(|d| (*d, 3.0 / d.sqrt())).collect();
        assert_abs_diff_eq!(rate_slope(&sqrt).unwrap(), -0.5, epsilon = 1e-12);
        let inv: Vec<(f64, f64)> = ds.iter().map(|d| (*d, 0.7 / d)).collect();
        assert_abs_diff_eq!(rate_slope(&inv).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn rate_slope_rejects_thin_grids() {
        assert!(rate_slope(&[(1.0, 1.0), (8.0, 0.5)]).is_err());
        assert!(rate_slope(&[(10.0, 1.0), (20.0, 0.5), (30.0, 0.3)]).is_err());
        assert!(rate_slope(&[(1.0, 1.0), (2.0, 0.0), (8.0, 0.3)]).is_err());
    }

    #[test]
    fn too_few_iterations() {
        let theta = ParameterVector::zeros(3).unwrap();
        let est = EstimatorSpec::standard(1.0).unwrap();
        assert_eq!(run_monte_carlo(&theta, &league(2), &est, 1, 0), Err(McError::TooFewIterations(1)));
    }

    #[test]
    fn report_invariants_and_antisymmetry_at_two_items() {
        let theta = ParameterVector::new(vec![0.6, -0.6]).unwrap();
        let est = EstimatorSpec::standard(1.0).unwrap();
        let r = run_monte_carlo(&theta, &league(5), &est, 400, 3).unwrap();
        assert_eq!(r.iterations_run, 400);
        assert_eq!(r.max_abs_bias, r.per_item_bias.iter().fold(0.0_f64, |m, b| m.max(b.abs())));
        assert!(r.per_item_bias_se.iter().all(|s| *s >= 0.0) && r.mse_se >= 0.0);
        assert!((r.per_item_bias[0] + r.per_item_bias[1]).abs() <= 2.0 * r.per_item_bias_se[0]);
        assert!((0.0..=1.0).contains(&r.clipping_frequency));
    }

    #[test]
    fn all_discarded_when_graph_never_connects() {
        let theta = ParameterVector::zeros(30).unwrap();
        let design = ObservationDesign::random(1, 1e-6).unwrap();
        let est = EstimatorSpec::standard(1.0).unwrap();
        assert_eq!(run_monte_carlo(&theta, &design, &est, 5, 1), Err(McError::AllIterationsDiscarded));
    }

    #[test]
    fn unconstrained_on_two_items_fails_too_often() {
        // With k = 3, one item sweeps the other in a quarter of the draws.
        let theta = ParameterVector::zeros(2).unwrap();
        let r = run_monte_carlo(&theta, &league(3), &EstimatorSpec::unconstrained(), 200, 4);
        assert!(matches!(r, Err(McError::TooManyFailures { first: FitError::NotStronglyConnected, .. })));
    }

    #[test]
    fn independent_of_thread_count() {
        let theta = make_true_params(&TrueParameterFamily::new(ParameterFamily::Linear, 1.0), 6).unwrap();
        let est = EstimatorSpec::stretched(2.0, 1.0).unwrap();
        let design = ObservationDesign::random(4, 0.7).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_monte_carlo(&theta, &design, &est, 300, 99).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn sweep_keeps_cell_errors() {
        let cells = vec![
            SweepCell {
                d: 4,
                design: league(3),
                estimator: EstimatorSpec::standard(1.0).unwrap(),
                family: TrueParameterFamily::new(ParameterFamily::WorstCase, 1.0),
            },
            SweepCell {
                d: 5,
                design: league(3),
                estimator: EstimatorSpec::standard(1.0).unwrap(),
                family: TrueParameterFamily::new(ParameterFamily::Bipolar, 1.0),
            },
        ];
        let out = sweep(&cells, 50, 1).unwrap();
        assert!(out[0].result.is_ok());
        assert_eq!(out[1].result, Err(McError::Model(ModelError::OddBipolar(5))));
        assert!(sweep(&[], 10, 1).is_err());
        let again = sweep(&cells[..1], 50, 1).unwrap();
        assert_eq!(again[0].result, out[0].result);
    }

    #[test]
    fn csv_round_trip() {
        let cell = SweepCell {
            d: 4,
            design: ObservationDesign::random(5, 0.9).unwrap(),
            estimator: EstimatorSpec::stretched(2.0, 1.0).unwrap(),
            family: TrueParameterFamily::new(ParameterFamily::Linear, 1.0),
        };
        let theta = make_true_params(&cell.family, 4).unwrap();
        let report = run_monte_carlo(&theta, &cell.design, &cell.estimator, 100, 8).unwrap();
        let rows = vec![SummaryRow::new(&cell, &report, 100)];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let header = String::from_utf8(buf.clone()).unwrap();
        assert!(header.starts_with(
            "d,k,p_obs,family,estimator_kind,bound,n_iters,n_discarded,max_abs_bias,max_abs_bias_se,mse,mse_se,clipping_frequency"
        ));
        assert_eq!(read_csv::<SummaryRow, _>(buf.as_slice()).unwrap(), rows);

        let items = item_rows(&theta, &report);
        let mut buf = Vec::new();
        write_csv(&mut buf, &items).unwrap();
        assert!(buf.starts_with(b"item_index,theta_star,bias,se\n"));
        assert_eq!(read_csv::<ItemRow, _>(buf.as_slice()).unwrap(), items);
    }
}
