//! Maximum-likelihood estimators over the box-and-centering domain
//! `{||θ||_∞ <= bound, Σθ = 0}` and over the centering hyperplane alone.
//!
//! One routine covers the standard MLE (bound `B`) and the stretched MLE
//! (bound `A > B`): projected gradient descent from the origin with a
//! backtracking line search and an exact Euclidean projection. The
//! unconstrained MLE runs the same iteration with projection reduced to
//! re-centering. Two-item closed forms and the symmetrized "oracle"
//! estimators live here too; the test suites use them as references.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{is_connected_undirected, is_strongly_connected, ComparisonGraph};
use crate::likelihood::{LikelihoodError, Objective};
use crate::model::{
    sup_norm, win_fractions, ComparisonData, ModelError, ParameterVector, WinFractionMatrix,
};

/// Distance from the bound under which a coordinate counts as clipped.
pub const ACTIVE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("NotConnected: the observed-pair graph is disconnected, the problem is not identifiable")]
    NotConnected,
    #[error("NotStronglyConnected: the comparison graph is not strongly connected, no finite unconstrained MLE exists")]
    NotStronglyConnected,
    #[error("MaxItersExceeded: no convergence after {} iterations (residual {:e})", best.iterations, best.final_residual)]
    MaxItersExceeded { best: Box<FitResult> },
    #[error("DivergentEstimate: the unconstrained estimate is infinite at win fraction {0}")]
    DivergentEstimate(f64),
    #[error("InvalidEstimator: {0}")]
    InvalidEstimator(String),
    #[error("InvalidInput: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl FitError {
    /// Stable identifier used on the command line's diagnostic stream.
    pub fn name(&self) -> &'static str {
        match self {
            Self::NotConnected => "NotConnected",
            Self::NotStronglyConnected => "NotStronglyConnected",
            Self::MaxItersExceeded { .. } => "MaxItersExceeded",
            Self::DivergentEstimate(_) => "DivergentEstimate",
            Self::InvalidEstimator(_) => "InvalidEstimator",
            Self::InvalidInput(_) => "InvalidInput",
            Self::Likelihood(_) => "DimensionMismatch",
            Self::Model(_) => "InvalidModel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Stop once the sup-norm of the scale-free projected-gradient mapping is at most this.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Backtracking factor in `(0, 1)`.
    pub shrink: f64,
    /// Armijo sufficient-decrease constant.
    pub sufficient_decrease: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { grad_tol: 1e-10, max_iters: 100_000, shrink: 0.5, sufficient_decrease: 1e-4 }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), FitError> {
        let ok = self.grad_tol > 0.0
            && self.max_iters >= 1
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.sufficient_decrease > 0.0
            && self.sufficient_decrease < 1.0;
        if ok {
            Ok(())
        } else {
            Err(FitError::InvalidEstimator(format!("invalid solver settings {self:?}")))
        }
    }
}

/// Which estimator to run. `b` is the true-domain half-width; the stretched
/// variant optimizes over the larger box `a > b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    Standard { b: f64 },
    Stretched { a: f64, b: f64 },
    Unconstrained,
}

impl EstimatorKind {
    pub fn validate(&self) -> Result<(), FitError> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        match *self {
            Self::Standard { b } if !pos(b) => {
                Err(FitError::InvalidEstimator(format!("bound must be positive, got {b}")))
            }
            Self::Stretched { a, b } if !(pos(b) && a.is_finite() && a > b) => Err(
                FitError::InvalidEstimator(format!("stretched estimator needs A > B > 0, got A={a}, B={b}")),
            ),
            _ => Ok(()),
        }
    }

    /// Box half-width the optimizer uses, `None` for the unconstrained MLE.
    pub fn bound(&self) -> Option<f64> {
        match *self {
            Self::Standard { b } => Some(b),
            Self::Stretched { a, .. } => Some(a),
            Self::Unconstrained => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Standard { .. } => "standard",
            Self::Stretched { .. } => "stretched",
            Self::Unconstrained => "unconstrained",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub settings: SolverSettings,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind, settings: SolverSettings) -> Result<Self, FitError> {
        kind.validate()?;
        settings.validate()?;
        Ok(Self { kind, settings })
    }

    pub fn standard(b: f64) -> Result<Self, FitError> {
        Self::new(EstimatorKind::Standard { b }, SolverSettings::default())
    }

    pub fn stretched(a: f64, b: f64) -> Result<Self, FitError> {
        Self::new(EstimatorKind::Stretched { a, b }, SolverSettings::default())
    }

    pub fn unconstrained() -> Self {
        Self { kind: EstimatorKind::Unconstrained, settings: SolverSettings::default() }
    }

    pub fn fit(&self, data: &ComparisonData) -> Result<FitResult, FitError> {
        self.fit_fractions(&win_fractions(data))
    }

    pub fn fit_fractions(&self, mu: &WinFractionMatrix) -> Result<FitResult, FitError> {
        match self.kind.bound() {
            Some(bound) => fit_mle_fractions(mu, bound, &self.settings),
            None => fit_unconstrained_fractions(mu, &self.settings),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: ParameterVector,
    pub iterations: usize,
    pub final_residual: f64,
    pub constraint_active: bool,
}

/// Euclidean projection onto `{||θ||_∞ <= bound, Σθ = 0}`.
///
/// The minimizer is `clip(v - τ, -bound, bound)` where `τ` zeroes the sum;
/// `τ` is bracketed and bisected, then snapped to the exact root of the
/// linear piece it landed on.
pub fn project_to_domain(v: &[f64], bound: f64) -> Result<ParameterVector, ModelError> {
    if v.len() < 2 {
        return Err(ModelError::TooFewItems(v.len()));
    }
    if !(bound.is_finite() && bound > 0.0) {
        return Err(ModelError::InvalidBound(bound));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite(i));
    }
    let mut out = v.to_vec();
    project_in_place(&mut out, bound);
    ParameterVector::new(out)
}

fn clipped_sum(v: &[f64], tau: f64, bound: f64) -> f64 {
    v.iter().map(|x| (x - tau).clamp(-bound, bound)).sum()
}

pub(crate) fn project_in_place(v: &mut [f64], bound: f64) {
    let (min, max) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    // clipped_sum is nonincreasing in τ, +d·bound at `lo` and -d·bound at `hi`.
    let (mut lo, mut hi) = (min - bound, max + bound);
    for _ in 0..200 {
        if hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if clipped_sum(v, mid, bound) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut tau = 0.5 * (lo + hi);

    // Exact root on the current piece: Σ_free (v_i - τ) + bound·(n_up - n_low) = 0.
    let (mut free_sum, mut n_free, mut n_up, mut n_low) = (0.0, 0usize, 0i64, 0i64);
    for &x in v.iter() {
        let y = x - tau;
        if y >= bound {
            n_up += 1;
        } else if y <= -bound {
            n_low += 1;
        } else {
            free_sum += x;
            n_free += 1;
        }
    }
    if n_free > 0 {
        let snapped = (free_sum + bound * (n_up - n_low) as f64) / n_free as f64;
        if clipped_sum(v, snapped, bound).abs() <= clipped_sum(v, tau, bound).abs() {
            tau = snapped;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - tau).clamp(-bound, bound));
}

fn center_in_place(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Largest eigenvalue bound of the Hessian: `(1/4)·λ_max(Laplacian) <= max weighted degree / 2`.
fn lipschitz_bound(mu: &WinFractionMatrix) -> f64 {
    let d = mu.d();
    (0..d)
        .map(|i| (0..d).map(|j| mu.weight(i, j)).sum::<f64>())
        .fold(0.0, f64::max)
        / 2.0
}

struct Descent<'a, P: Fn(&mut [f64])> {
    objective: Objective,
    project: P,
    settings: &'a SolverSettings,
    /// Gradient scale: the mapping is measured at step `1/scale`.
    scale: f64,
    lipschitz: f64,
}

impl<P: Fn(&mut [f64])> Descent<'_, P> {
    fn stationarity(&self, x: &[f64], g: &[f64], buf: &mut [f64]) -> f64 {
        for ((b, xi), gi) in buf.iter_mut().zip(x).zip(g) {
            *b = xi - gi / self.scale;
        }
        (self.project)(buf);
        x.iter().zip(buf.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn run(&self) -> Result<(Vec<f64>, usize, f64), Vec<f64>> {
        let d = self.objective.d();
        let mut x = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut f = self.objective.value_and_gradient(&x, &mut g);
        let mut y = vec![0.0; d];
        let mut gy = vec![0.0; d];
        let mut buf = vec![0.0; d];

        // Steps no longer than 1/L always decrease f, so they are accepted outright.
        let t_min = 1.0 / self.lipschitz;
        let t_max = 1e6 * t_min;
        let mut t = t_min;
        let c = self.settings.sufficient_decrease;

        for iter in 0..self.settings.max_iters {
            let res = self.stationarity(&x, &g, &mut buf);
            if res <= self.settings.grad_tol {
                return Ok((x, iter, res));
            }
            let mut step = t;
            let fy = loop {
                for ((yi, xi), gi) in y.iter_mut().zip(&x).zip(&g) {
                    *yi = xi - step * gi;
                }
                (self.project)(&mut y);
                let fy = self.objective.value_and_gradient(&y, &mut gy);
                let decrease: f64 = g.iter().zip(y.iter().zip(&x)).map(|(gi, (yi, xi))| gi * (yi - xi)).sum();
                if fy <= f + c * decrease || step <= t_min {
                    break fy;
                }
                step = (step * self.settings.shrink).max(t_min);
            };
            // Barzilai-Borwein guess for the next trial step.
            let (mut ss, mut sr) = (0.0, 0.0);
            for i in 0..d {
                let s = y[i] - x[i];
                ss += s * s;
                sr += s * (gy[i] - g[i]);
            }
            t = if sr > 0.0 { (ss / sr).clamp(t_min, t_max) } else { t_min };
            std::mem::swap(&mut x, &mut y);
            std::mem::swap(&mut g, &mut gy);
            f = fy;
        }
        Err(x)
    }
}

fn finish(
    theta: Vec<f64>,
    iterations: usize,
    residual: f64,
    bound: Option<f64>,
) -> Result<FitResult, FitError> {
    let constraint_active = bound.is_some_and(|b| sup_norm(&theta) >= b - ACTIVE_TOL);
    Ok(FitResult {
        theta_hat: ParameterVector::new(theta)?,
        iterations,
        final_residual: residual,
        constraint_active,
    })
}

fn solve(
    mu: &WinFractionMatrix,
    bound: Option<f64>,
    settings: &SolverSettings,
) -> Result<FitResult, FitError> {
    let project = |v: &mut [f64]| match bound {
        Some(b) => project_in_place(v, b),
        None => center_in_place(v),
    };
    let descent = Descent {
        objective: Objective::new(mu),
        project,
        settings,
        scale: mu.max_weight(),
        lipschitz: lipschitz_bound(mu),
    };
    match descent.run() {
        Ok((theta, iters, res)) => finish(theta, iters, res, bound),
        Err(theta) => {
            let mut g = vec![0.0; theta.len()];
            descent.objective.value_and_gradient(&theta, &mut g);
            let mut buf = vec![0.0; theta.len()];
            let res = descent.stationarity(&theta, &g, &mut buf);
            let best = finish(theta, settings.max_iters, res, bound)?;
            Err(FitError::MaxItersExceeded { best: Box::new(best) })
        }
    }
}

fn check_inputs(mu: &WinFractionMatrix, settings: &SolverSettings) -> Result<(), FitError> {
    settings.validate()?;
    if mu.d() < 2 {
        return Err(ModelError::TooFewItems(mu.d()).into());
    }
    Ok(())
}

/// Box-constrained MLE over `{||θ||_∞ <= bound, Σθ = 0}`. With `bound = B`
/// this is the standard MLE, with `bound = A > B` the stretched MLE.
pub fn fit_mle(data: &ComparisonData, bound: f64, settings: &SolverSettings) -> Result<FitResult, FitError> {
    fit_mle_fractions(&win_fractions(data), bound, settings)
}

pub fn fit_mle_fractions(
    mu: &WinFractionMatrix,
    bound: f64,
    settings: &SolverSettings,
) -> Result<FitResult, FitError> {
    check_inputs(mu, settings)?;
    if !(bound.is_finite() && bound > 0.0) {
        return Err(ModelError::InvalidBound(bound).into());
    }
    if !is_connected_undirected(&ComparisonGraph::from_fractions(mu)) {
        return Err(FitError::NotConnected);
    }
    solve(mu, Some(bound), settings)
}

/// MLE over the centering hyperplane only. Fails unless the "who beat whom"
/// graph is strongly connected, the condition for a finite optimum.
pub fn fit_unconstrained(data: &ComparisonData, settings: &SolverSettings) -> Result<FitResult, FitError> {
    fit_unconstrained_fractions(&win_fractions(data), settings)
}

pub fn fit_unconstrained_fractions(
    mu: &WinFractionMatrix,
    settings: &SolverSettings,
) -> Result<FitResult, FitError> {
    check_inputs(mu, settings)?;
    let graph = ComparisonGraph::from_fractions(mu);
    if !is_connected_undirected(&graph) {
        return Err(FitError::NotConnected);
    }
    if !is_strongly_connected(&graph) {
        return Err(FitError::NotStronglyConnected);
    }
    solve(mu, None, settings)
}

fn check_fraction(mu: f64) -> Result<(), FitError> {
    if (0.0..=1.0).contains(&mu) {
        Ok(())
    } else {
        Err(FitError::InvalidInput(format!("win fraction {mu} outside [0, 1]")))
    }
}

/// Estimate of item 1 for two items, where item 1 won a fraction `mu` of the
/// games (item 2's estimate is the negation).
pub fn closed_form_two_items(mu: f64, kind: &EstimatorKind) -> Result<f64, FitError> {
    check_fraction(mu)?;
    kind.validate()?;
    match kind.bound() {
        None => {
            if mu == 0.0 || mu == 1.0 {
                return Err(FitError::DivergentEstimate(mu));
            }
            Ok(-0.5 * (1.0 / mu - 1.0).ln())
        }
        Some(bound) => {
            let lower = 1.0 / (1.0 + (2.0 * bound).exp());
            let upper = 1.0 / (1.0 + (-2.0 * bound).exp());
            Ok(if mu <= lower {
                -bound
            } else if mu >= upper {
                bound
            } else {
                -0.5 * (1.0 / mu - 1.0).ln()
            })
        }
    }
}

/// First coordinates of the symmetrized oracle estimators. The full vectors
/// are `[t, -t/(d-1), ..., -t/(d-1)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleEstimates {
    /// Fraction of item 1's games that it won.
    pub mu_1: f64,
    /// `None` when `mu_1` is 0 or 1 (the estimate diverges).
    pub theta_oracle_unconstrained_1: Option<f64>,
    pub theta_oracle_constrained_1: f64,
    pub d: usize,
}

impl OracleEstimates {
    pub fn unconstrained(&self) -> Result<f64, FitError> {
        self.theta_oracle_unconstrained_1.ok_or(FitError::DivergentEstimate(self.mu_1))
    }

    pub fn expand(&self, first: f64) -> Vec<f64> {
        let rest = -first / (self.d - 1) as f64;
        std::iter::once(first).chain(std::iter::repeat_n(rest, self.d - 1)).collect()
    }
}

/// Oracle estimates from league data, with `mu_1` the average win fraction
/// of item 1 (index 0) against the rest.
pub fn oracle_estimates(data: &ComparisonData, b: f64) -> Result<OracleEstimates, FitError> {
    if data.league_count().is_none() {
        return Err(FitError::InvalidInput("oracle estimates need league data".into()));
    }
    let mu = win_fractions(data);
    let d = data.d();
    let mu_1 = (1..d).map(|m| mu.mu(0, m)).sum::<f64>() / (d - 1) as f64;
    oracle_from_win_fraction(mu_1, d, b)
}

pub fn oracle_from_win_fraction(mu_1: f64, d: usize, b: f64) -> Result<OracleEstimates, FitError> {
    check_fraction(mu_1)?;
    if d < 2 {
        return Err(ModelError::TooFewItems(d).into());
    }
    if !(b.is_finite() && b > 0.0) {
        return Err(ModelError::InvalidBound(b).into());
    }
    let stretch = d as f64 / (d - 1) as f64;
    let shrink = (d - 1) as f64 / d as f64;
    let log_branch = || -shrink * (1.0 / mu_1 - 1.0).ln();
    let upper = 1.0 / (1.0 + (-stretch * b).exp());
    let lower = 1.0 / (1.0 + (stretch * b).exp());
    let constrained = if mu_1 >= upper {
        b
    } else if mu_1 <= lower {
        -b
    } else {
        log_branch()
    };
    let unconstrained = (mu_1 > 0.0 && mu_1 < 1.0).then(log_branch);
    Ok(OracleEstimates {
        mu_1,
        theta_oracle_unconstrained_1: unconstrained,
        theta_oracle_constrained_1: constrained,
        d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{first_order_residual, nll};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    #[test]
    fn projection_examples() {
        let p = project_to_domain(&[3.0, -1.0], 2.0).unwrap();
        assert_abs_diff_eq!(p[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], -2.0, epsilon = 1e-12);
        let p = project_to_domain(&[1.0, -1.0, 0.0], 5.0).unwrap();
        assert_eq!(p.values(), &[1.0, -1.0, 0.0]);
        let p = project_to_domain(&[0.25, 0.5, -0.75], 1.0).unwrap();
        assert_eq!(p.values(), &[0.25, 0.5, -0.75]);
        assert!(project_to_domain(&[1.0], 1.0).is_err());
        assert!(project_to_domain(&[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn projection_of_far_point_hits_box() {
        let p = project_to_domain(&[100.0, 0.0, 0.0, -3.0], 1.0).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p.values().iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn symmetric_data_gives_zero() {
        let mu = WinFractionMatrix::two_items(0.5, 3.0).unwrap();
        let fit = fit_mle_fractions(&mu, 1.0, &settings()).unwrap();
        assert!(fit.theta_hat.values().iter().all(|t| t.abs() < 1e-12));
        assert!(!fit.constraint_active);
        let mu = WinFractionMatrix::league(6, 4.0, |_, _| 0.5).unwrap();
        let fit = fit_unconstrained_fractions(&mu, &settings()).unwrap();
        assert!(fit.theta_hat.values().iter().all(|t| t.abs() < 1e-12));
    }

    #[test]
    fn two_item_examples() {
        let upper = 1.0 / (1.0 + (-2.0f64).exp());
        for mu in [upper, 0.9, 0.95, 1.0] {
            let fit = fit_mle_fractions(&WinFractionMatrix::two_items(mu, 5.0).unwrap(), 1.0, &settings()).unwrap();
            assert_abs_diff_eq!(fit.theta_hat[0], 1.0, epsilon = 1e-9);
            assert!(fit.constraint_active);
        }
        let fit = fit_mle_fractions(&WinFractionMatrix::two_items(0.9, 10.0).unwrap(), 2.0, &settings()).unwrap();
        assert_abs_diff_eq!(fit.theta_hat[0], 1.098_612_288_668_109_6, epsilon = 1e-9);
        assert!(!fit.constraint_active);
        let fit = fit_unconstrained_fractions(&WinFractionMatrix::two_items(0.8, 5.0).unwrap(), &settings()).unwrap();
        assert_abs_diff_eq!(fit.theta_hat[0], std::f64::consts::LN_2, epsilon = 1e-9);
    }

    #[test]
    fn dominant_item_has_no_finite_unconstrained_estimate() {
        let data = ComparisonData::from_pairs(3, [(0, 1, 4, 4), (0, 2, 4, 4), (1, 2, 4, 2)]).unwrap();
        assert_eq!(fit_unconstrained(&data, &settings()), Err(FitError::NotStronglyConnected));
        let fit = fit_mle(&data, 1.0, &settings()).unwrap();
        assert_abs_diff_eq!(fit.theta_hat[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn disconnected_data_is_rejected() {
        let data = ComparisonData::from_pairs(4, [(0, 1, 2, 1), (2, 3, 2, 1)]).unwrap();
        assert_eq!(fit_mle(&data, 1.0, &settings()), Err(FitError::NotConnected));
        assert_eq!(fit_unconstrained(&data, &settings()), Err(FitError::NotConnected));
    }

    #[test]
    fn max_iters_returns_best_iterate() {
        let mu = WinFractionMatrix::league(5, 3.0, |_, _| 2.0 / 3.0).unwrap();
        let tight = SolverSettings { max_iters: 1, ..settings() };
        match fit_mle_fractions(&mu, 1.0, &tight) {
            Err(FitError::MaxItersExceeded { best }) => {
                assert_eq!(best.iterations, 1);
                assert!(best.final_residual > tight.grad_tol);
            }
            other => panic!("expected MaxItersExceeded, got {other:?}"),
        }
    }

    #[test]
    fn estimator_validation() {
        assert!(EstimatorSpec::stretched(1.0, 1.0).is_err());
        assert!(EstimatorSpec::stretched(0.5, 1.0).is_err());
        assert!(EstimatorSpec::standard(-1.0).is_err());
        assert!(EstimatorSpec::stretched(2.0, 1.0).is_ok());
        let bad = SolverSettings { shrink: 1.0, ..settings() };
        assert!(EstimatorSpec::new(EstimatorKind::Unconstrained, bad).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let kinds = [
            EstimatorKind::Standard { b: 1.0 },
            EstimatorKind::Stretched { a: 2.0, b: 1.0 },
            EstimatorKind::Unconstrained,
        ];
        for kind in &kinds {
            assert_eq!(closed_form_two_items(0.5, kind).unwrap(), 0.0);
        }
        assert_eq!(closed_form_two_items(0.95, &kinds[0]).unwrap(), 1.0);
        assert_abs_diff_eq!(closed_form_two_items(0.95, &kinds[1]).unwrap(), 1.472_219_489_583_220_8, epsilon = 1e-12);
        assert_eq!(closed_form_two_items(1.0, &kinds[2]), Err(FitError::DivergentEstimate(1.0)));
        assert_eq!(closed_form_two_items(0.0, &kinds[2]), Err(FitError::DivergentEstimate(0.0)));
        assert_eq!(closed_form_two_items(0.0, &kinds[1]).unwrap(), -2.0);
        assert!(closed_form_two_items(1.5, &kinds[0]).is_err());
    }

    #[test]
    fn oracle_examples() {
        let o = oracle_from_win_fraction(0.5, 7, 1.0).unwrap();
        assert_eq!(o.theta_oracle_constrained_1, 0.0);
        assert_eq!(o.unconstrained().unwrap(), 0.0);
        let o = oracle_from_win_fraction(0.7, 3, 1.0).unwrap();
        assert_abs_diff_eq!(o.unconstrained().unwrap(), 0.564_865_240_258_135_7, epsilon = 1e-12);
        assert_abs_diff_eq!(o.theta_oracle_constrained_1, 0.564_865_240_258_135_7, epsilon = 1e-12);
        let o = oracle_from_win_fraction(1.0, 4, 1.0).unwrap();
        assert_eq!(o.unconstrained(), Err(FitError::DivergentEstimate(1.0)));
        assert_eq!(o.theta_oracle_constrained_1, 1.0);
        let v = o.expand(0.9);
        assert_eq!(v.len(), 4);
        assert_abs_diff_eq!(v.iter().sum::<f64>(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn oracle_threshold_is_exactly_b() {
        for d in [2usize, 3, 10, 40] {
            let s = d as f64 / (d - 1) as f64;
            let mu_star = 1.0 / (1.0 + (-s * 1.0f64).exp());
            assert_eq!(oracle_from_win_fraction(mu_star, d, 1.0).unwrap().theta_oracle_constrained_1, 1.0);
        }
    }

    #[test]
    fn oracle_from_league_data() {
        let data = ComparisonData::from_pairs(
            3,
            [(0, 1, 10, 7), (0, 2, 10, 7), (1, 2, 10, 5)],
        )
        .unwrap();
        let o = oracle_estimates(&data, 1.0).unwrap();
        assert_abs_diff_eq!(o.mu_1, 0.7, epsilon = 1e-15);
        let sparse = ComparisonData::from_pairs(3, [(0, 1, 10, 7), (1, 2, 10, 5)]).unwrap();
        assert!(oracle_estimates(&sparse, 1.0).is_err());
    }

    #[test]
    fn oracle_vector_solves_symmetrized_problem() {
        // The oracle is the unconstrained MLE of the symmetrized fractions.
        let (d, mu_1) = (6, 0.64);
        let mu = WinFractionMatrix::league(d, 5.0, |i, _| if i == 0 { mu_1 } else { 0.5 }).unwrap();
        let fit = fit_unconstrained_fractions(&mu, &settings()).unwrap();
        let o = oracle_from_win_fraction(mu_1, d, 1.0).unwrap();
        for (a, b) in fit.theta_hat.values().iter().zip(o.expand(o.unconstrained().unwrap())) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-8);
        }
        let fit = fit_mle_fractions(&WinFractionMatrix::league(d, 5.0, |i, _| if i == 0 { 0.9 } else { 0.5 }).unwrap(), 1.0, &settings()).unwrap();
        let o = oracle_from_win_fraction(0.9, d, 1.0).unwrap();
        assert_abs_diff_eq!(fit.theta_hat[0], o.theta_oracle_constrained_1, epsilon = 1e-8);
    }

    fn random_centered(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-scale..scale)).collect();
        center_in_place(&mut v);
        v
    }

    #[test]
    fn stretched_matches_unconstrained_when_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let d = rng.random_range(3..12);
            let k = rng.random_range(3..10) as f64;
            let theta = random_centered(&mut rng, d, 1.0);
            let mu = WinFractionMatrix::league(d, k, |i, j| {
                let p = crate::model::btl_probability(theta[i], theta[j]);
                (p * k).round().clamp(1.0, k - 1.0) / k
            })
            .unwrap();
            let free = fit_unconstrained_fractions(&mu, &settings()).unwrap();
            let a = 2.0;
            if free.theta_hat.sup_norm() <= a - 1e-6 {
                let boxed = fit_mle_fractions(&mu, a, &settings()).unwrap();
                for (x, y) in free.theta_hat.values().iter().zip(boxed.theta_hat.values()) {
                    assert_abs_diff_eq!(x, y, epsilon = 1e-6);
                }
            }
            let r = first_order_residual(&mu, free.theta_hat.values()).unwrap();
            assert!(r.iter().all(|x| x.abs() <= 1e-10));
            let narrow = fit_mle_fractions(&mu, 0.5, &settings()).unwrap();
            let wide = fit_mle_fractions(&mu, 1.5, &settings()).unwrap();
            assert!(
                nll(&mu, wide.theta_hat.values()).unwrap()
                    <= nll(&mu, narrow.theta_hat.values()).unwrap() + 1e-9
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn projection_is_feasible_idempotent_and_optimal(
            seed in any::<u64>(), d in 2usize..50, bound in 0.1..3.0f64, scale in 0.1..10.0f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-scale..scale) + 1.0).collect();
            let p = project_to_domain(&v, bound).unwrap();
            prop_assert!(p.values().iter().sum::<f64>().abs() <= 1e-9);
            prop_assert!(p.sup_norm() <= bound + 1e-9);
            let again = project_to_domain(p.values(), bound).unwrap();
            for (a, b) in p.values().iter().zip(again.values()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            for _ in 0..20 {
                let q = project_to_domain(&random_centered(&mut rng, d, 2.0 * bound), bound).unwrap();
                let ip: f64 = (0..d).map(|i| (v[i] - p[i]) * (q[i] - p[i])).sum();
                prop_assert!(ip <= 1e-9, "variational inequality violated: {}", ip);
            }
        }
    }
}
