//! Capacity-constrained selection with strategic, competing agents.
//!
//! Agents shift their reported covariates toward a linear selection rule,
//! the decision maker treats the top `1 - q` share of scores, and the
//! resulting threshold dynamics settle at a mean-field equilibrium. The crate
//! provides the agent model, the mean-field solver, a finite-population
//! simulator with randomized unit-level perturbations, regression-based
//! gradient estimators, and projected gradient ascent over the criterion.

pub mod agent;
pub mod error;
pub mod estimators;
pub mod gaussian;
pub mod ingest;
pub mod learner;
pub mod population;
pub mod scenarios;
pub mod sim;
pub mod sphere;

pub use agent::{
    best_response, best_response_any_regime, expected_score, expected_utility, noise_regime,
    score_derivative, score_gradient_beta, AgentType, BestResponse, CostKind, CostSpec,
    CovariateBox, NoiseRegime, Policy,
};
pub use error::{Error, Result};
pub use gaussian::NoiseModel;
pub use population::{
    AnalyticGradient, Capacity, EquilibriumResult, FixedPointOptions, ThresholdGradient,
    TypeDistribution,
};
