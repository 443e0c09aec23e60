//! Maximum-likelihood estimation for the Bradley-Terry-Luce pairwise
//! comparison model with a box constraint at the true bound `B`, a stretched
//! box `A > B`, or no box at all, plus a Monte-Carlo harness measuring the
//! bias and mean squared error of each estimator.

pub mod cli;
pub mod estimators;
pub mod graph;
pub mod likelihood;
pub mod model;
pub mod montecarlo;

pub use estimators::{
    closed_form_two_items, fit_mle, fit_unconstrained, oracle_estimates, project_to_domain,
    EstimatorKind, EstimatorSpec, FitError, FitResult, SolverSettings,
};
pub use graph::{build_comparison_graph, is_connected_undirected, is_strongly_connected, ComparisonGraph};
pub use likelihood::{first_order_residual, nll, nll_gradient};
pub use model::{
    btl_probability, make_true_params, sample_comparisons, win_fractions, ComparisonData,
    ObservationDesign, ParameterFamily, ParameterVector, TrueParameterFamily, WinFractionMatrix,
};
pub use montecarlo::{rate_slope, run_monte_carlo, sweep, MetricsReport};
