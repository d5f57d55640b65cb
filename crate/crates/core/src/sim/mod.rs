//! Data generators and the Monte Carlo experiment runner.
//!
//! Setting I has six observed covariates and a linear truth; Setting II has
//! five observed covariates, an interaction and two hidden covariates in
//! the truth. External models are fitted once per scenario on a large
//! simulated external cohort; each replicate draws an internal training
//! cohort and an independent test cohort from its own random streams.

pub mod boost;
pub mod experiment;
pub mod external;
pub mod generate;
pub mod highdim;
pub mod rng;
pub mod scenario;

pub use experiment::{
    run_experiment, run_setting1, run_setting2, ExperimentConfig, ExperimentReport,
};
pub use external::{build_external_model, stacked_baseline, ExternalModel, StackedFit};
pub use generate::{calibrate_censoring, generate_covariates, generate_outcomes, Covariates};
pub use scenario::{cell, cell_names, ExternalSpec, ModelFamily, Setting, SimScenario};
