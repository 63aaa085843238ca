//! Bundled adoption of two social norms with conformity spillovers.
//!
//! Individuals choose one of four bundles (neither, A only, B only, both)
//! under bivariate normal shocks. Utilities depend on lagged group shares, so
//! group shares evolve by a best-response map. The crate covers choice
//! probabilities, equilibria and their classification, simulation, maximum
//! likelihood with generated-regressor corrected inference, and policy
//! counterfactuals.

pub mod counterfactual;
pub mod dgp;
pub mod equilibrium;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod model;
pub mod optimize;
pub mod quadrature;
pub mod residualize;

#[cfg(test)]
mod testutil;

pub use counterfactual::{
    run_counterfactual, run_counterfactual_with, CounterfactualInput, CounterfactualOptions, CounterfactualPath, GroupPath,
    HorizonDelta, PolicySpec, SabAdjustRule,
};
pub use dgp::{simulate, CovariateGen, CovariateSpec, PanelDataset, PanelRow, SimConfig, SimOutput};
pub use equilibrium::{
    classify, solve_equilibrium, solve_equilibrium_with, BestResponse, ClassificationVerdict, ClassifyOptions, CovariateDist,
    EquilibriumReport, EquilibriumSet, NumericalSign, SolverOptions, TheoremBranch,
};
pub use error::{Error, Result, StartRecord};
pub use estimation::{compute_lagged_shares, fit, loglik, FitConfig, FitResult, GradientMode, LagTable};
pub use inference::{sandwich, InferenceOptions, InferenceResult, WaldTest};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, LoadOptions, LoadedData, Recode};
pub use kernel::{ChoiceKernel, Indicator, ProbVector, ProbabilityRule, QuadratureSpec};
pub use model::{Bundle, CovariateRow, ExclusionSpec, ShareVector, Theta, UtilityIndex};
pub use optimize::OptimizerOptions;
pub use residualize::{residualize_cohort_shares, Outcome, ResidualizeSpec, Residualized};
