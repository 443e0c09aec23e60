//! Negative log-likelihood of the BTL model and its gradient.
//!
//! Each observed pair `(i, j)` with weight `k_ij` contributes
//! `k_ij * [log(e^θi + e^θj) - μ_ij θi - μ_ji θj]`; unobserved pairs contribute
//! nothing. Functions take plain slices because the objective is also
//! evaluated off the centered subspace (shift-invariance checks).

use thiserror::Error;

use crate::model::{btl_probability, WinFractionMatrix};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LikelihoodError {
    #[error("dimension mismatch: data has {data} items, parameter vector has {theta}")]
    DimensionMismatch { data: usize, theta: usize },
}

fn check_dims(mu: &WinFractionMatrix, theta: &[f64]) -> Result<(), LikelihoodError> {
    if mu.d() != theta.len() {
        return Err(LikelihoodError::DimensionMismatch { data: mu.d(), theta: theta.len() });
    }
    Ok(())
}

/// `log(e^a + e^b)` without overflow.
#[inline]
pub fn log_sum_exp2(a: f64, b: f64) -> f64 {
    a.max(b) + (-(a - b).abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy)]
struct PairTerm {
    i: usize,
    j: usize,
    weight: f64,
}

/// The objective in a form suited to repeated evaluation: observed pairs as a
/// flat list plus the linear term `c_m = Σ_i k_mi μ_mi`.
#[derive(Debug, Clone)]
pub struct Objective {
    d: usize,
    pairs: Vec<PairTerm>,
    linear: Vec<f64>,
}

impl Objective {
    pub fn new(mu: &WinFractionMatrix) -> Self {
        let d = mu.d();
        let mut linear = vec![0.0; d];
        let pairs = mu
            .observed()
            .map(|(i, j, m, w)| {
                linear[i] += w * m;
                linear[j] += w * mu.mu(j, i);
                PairTerm { i, j, weight: w }
            })
            .collect();
        Self { d, pairs, linear }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let smooth: f64 = self
            .pairs
            .iter()
            .map(|p| p.weight * log_sum_exp2(theta[p.i], theta[p.j]))
            .sum();
        smooth - dot(&self.linear, theta)
    }

    /// Writes the gradient into `grad` and returns the objective value.
    pub fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().zip(&self.linear).for_each(|(g, c)| *g = -c);
        let mut smooth = 0.0;
        for p in &self.pairs {
            let diff = theta[p.i] - theta[p.j];
            let e = (-diff.abs()).exp();
            smooth += p.weight * (theta[p.i].max(theta[p.j]) + e.ln_1p());
            // σ(diff) from the same exponential.
            let sig = if diff >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
            let g = p.weight * sig;
            grad[p.i] += g;
            grad[p.j] += p.weight - g;
        }
        smooth - dot(&self.linear, theta)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negative log-likelihood at `theta`.
pub fn nll(mu: &WinFractionMatrix, theta: &[f64]) -> Result<f64, LikelihoodError> {
    check_dims(mu, theta)?;
    Ok(Objective::new(mu).value(theta))
}

/// Analytic gradient: `∂ℓ/∂θ_m = Σ_i k_mi (σ(θ_m - θ_i) - μ_mi)`.
pub fn nll_gradient(mu: &WinFractionMatrix, theta: &[f64]) -> Result<Vec<f64>, LikelihoodError> {
    check_dims(mu, theta)?;
    let mut grad = vec![0.0; theta.len()];
    Objective::new(mu).value_and_gradient(theta, &mut grad);
    Ok(grad)
}

/// Scale-free optimality residual: component `m` is
/// `Σ_i (k_mi / k_max) (P(m beats i) - μ_mi)` over pairs observed with `m`.
/// With a common count per observed pair this is `Σ_i (P(m beats i) - μ_mi)`,
/// i.e. `gradient / k`; it vanishes at an interior optimum.
pub fn first_order_residual(mu: &WinFractionMatrix, theta: &[f64]) -> Result<Vec<f64>, LikelihoodError> {
    check_dims(mu, theta)?;
    let scale = mu.max_weight();
    let mut r = vec![0.0; theta.len()];
    for (i, j, m, w) in mu.observed() {
        let p = btl_probability(theta[i], theta[j]);
        let rel = w / scale;
        r[i] += rel * (p - m);
        r[j] += rel * ((1.0 - p) - mu.mu(j, i));
    }
    Ok(r)
}
