//! Sensitivity analysis for unmeasured confounding under an exponential
//! tilt model, with cross-fit one-step estimators, bootstrap intervals and a
//! simulation harness.

pub mod bootstrap;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod nuisance;
pub mod outcome;
pub mod propensity;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod tilting;

pub use bootstrap::{CiMethod, CiSpec, Estimate, Interval};
pub use dataset::{make_folds, Arm, Dataset, Observation, Schema, SplitPlan};
pub use error::{Error, Result};
pub use estimator::{
    crossfit_estimate, sensitivity_grid, CrossFit, CrossFitOptions, EstimateReport, GridReport, Quantity,
};
pub use nuisance::{DiscreteLaw, DiscreteNuisance, Nuisance, NuisanceBundle, NuisanceConfig, TiltedMoments};
pub use outcome::{fit_single_index, OutcomeFit, SingleIndexConfig};
pub use propensity::{fit_propensity, PropensityConfig, PropensityFit};
pub use tilting::{TiltFunction, TiltSpec};
