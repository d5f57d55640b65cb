//! Cox proportional hazards models that integrate external risk scores
//! through a partial-likelihood Kullback–Leibler penalty (CoxKL), with an
//! L1-penalized extension, cross-validated tuning, evaluation metrics and a
//! Monte Carlo simulation harness.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cox;
pub mod coxkl;
pub mod data;
pub mod error;
mod kernel;
pub mod lasso;
mod linalg;
pub mod metrics;
pub mod sim;
pub mod sparse;
pub mod tuning;

pub use cox::{fit_cox, log_partial_likelihood, score_and_information, CoxFitOptions, CoxKLFit};
pub use coxkl::{
    coxkl_objective, coxkl_score_and_information, external_weighted_covariates, fit_coxkl,
    kl_divergence, load_scores, CoxKlProblem, ExternalScores, PseudoCovariates,
};
pub use data::{
    breslow_baseline, load_dataset, risk_set, write_dataset, ColumnSchema, SurvivalDataset,
    SurvivalRecord,
};
pub use error::{Error, Result};
pub use lasso::{
    fit_coxkl_lasso, lambda_max, lasso_path, LassoFit, LassoOptions, RegularizationPath,
};
pub use metrics::{c_index, kaplan_meier, risk_stratify, StepFunction};
pub use sparse::SparseVector;
pub use tuning::{make_folds, select_tuning, vvh_cvpl, CvReport};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/cox.md")]
    mod cox {}
    #[doc = include_str!("../../../book/src/coxkl.md")]
    mod coxkl {}
    #[doc = include_str!("../../../book/src/lasso.md")]
    mod lasso {}
    #[doc = include_str!("../../../book/src/tuning.md")]
    mod tuning {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
