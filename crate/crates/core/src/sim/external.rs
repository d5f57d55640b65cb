use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::boost::{fit_boosted_cox, BoostOptions, BoostedModel};
use super::generate::{calibrate_censoring, simulate_cohort};
use super::scenario::{ExternalSpec, ModelFamily, SimScenario};
use crate::cox::{fit_cox, CoxFitOptions, CoxKLFit};
use crate::coxkl::ExternalScores;
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::sparse::SparseVector;

/// A fitted external risk model, applied to observed covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ExternalModel {
    /// Cox coefficients on every observed covariate (zero off the subset).
    Cox {
        coefficients: Vec<f64>,
    },
    Boosted(BoostedModel),
    /// Scores identically zero.
    Null,
}

impl ExternalModel {
    pub fn scores(&self, covariates: &Array2<f64>) -> Vec<f64> {
        match self {
            ExternalModel::Cox { coefficients } => covariates
                .rows()
                .into_iter()
                .map(|r| r.iter().zip(coefficients).map(|(z, b)| z * b).sum())
                .collect(),
            ExternalModel::Boosted(model) => model.predict(covariates),
            ExternalModel::Null => vec![0.0; covariates.nrows()],
        }
    }

    /// Coefficients when the model is linear in the observed covariates.
    pub fn linear_coefficients(&self, p: usize) -> Option<Vec<f64>> {
        match self {
            ExternalModel::Cox { coefficients } => Some(coefficients.clone()),
            ExternalModel::Null => Some(vec![0.0; p]),
            ExternalModel::Boosted(_) => None,
        }
    }

    /// Scores for `dataset` in the form consumed by CoxKL.
    pub fn external_scores(
        &self,
        label: &str,
        dataset: &SurvivalDataset,
    ) -> Result<ExternalScores> {
        let mut ext = ExternalScores::new(label, self.scores(dataset.covariates()))?;
        if let Some(b) = self.linear_coefficients(dataset.p()) {
            ext.linear_coefficients = Some(SparseVector::from_dense(&b));
        }
        Ok(ext)
    }
}

/// Simulates `n_external` subjects from the external population of `spec`
/// (same truth, latent probability `spec.p_l`, censoring calibrated to the
/// scenario's target for that population) and fits the spec's model.
pub fn build_external_model<R: Rng + ?Sized>(
    scenario: &SimScenario,
    spec: &ExternalSpec,
    rng: &mut R,
) -> Result<ExternalModel> {
    let p = scenario.setting.observed_covariates();
    if spec.family == ModelFamily::Null {
        return Ok(ExternalModel::Null);
    }
    let upper = calibrate_censoring(
        scenario.setting,
        spec.p_l,
        &scenario.beta_true,
        scenario.censoring_target,
        0.005,
        scenario.seed,
    )?;
    let (cohort, _) = simulate_cohort(
        scenario.setting,
        scenario.n_external,
        spec.p_l,
        &scenario.beta_true,
        upper,
        rng,
    )?;
    let columns: Vec<usize> = spec.covariates.iter().map(|c| c - 1).collect();
    match spec.family {
        ModelFamily::Cox => {
            let z = cohort.covariates();
            let mut sub = Array2::zeros((z.nrows(), columns.len()));
            for (k, &j) in columns.iter().enumerate() {
                sub.column_mut(k).assign(&z.column(j));
            }
            let names = columns.iter().map(|j| format!("z{}", j + 1)).collect();
            let fit = fit_cox(
                &cohort.with_covariates(sub, names)?,
                &CoxFitOptions::default(),
            )?;
            if !fit.converged {
                return Err(Error::Numerical("external Cox fit did not converge".into()));
            }
            let mut coefficients = vec![0.0; p];
            for (k, &j) in columns.iter().enumerate() {
                coefficients[j] = fit.beta_hat[k];
            }
            Ok(ExternalModel::Cox { coefficients })
        }
        ModelFamily::Boosted => Ok(ExternalModel::Boosted(fit_boosted_cox(
            &cohort,
            &columns,
            &BoostOptions::default(),
        )?)),
        ModelFamily::Null => unreachable!(),
    }
}

/// Internal Cox fit on `[Z | r_1 .. r_M]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedFit {
    pub fit: CoxKLFit,
    /// Number of internal covariates (leading coefficients).
    pub p: usize,
}

impl StackedFit {
    pub fn risk_scores(&self, covariates: &Array2<f64>, ext_scores: &[Vec<f64>]) -> Vec<f64> {
        let b = &self.fit.beta_hat;
        (0..covariates.nrows())
            .map(|i| {
                let direct: f64 = covariates
                    .row(i)
                    .iter()
                    .zip(&b[..self.p])
                    .map(|(z, c)| z * c)
                    .sum();
                direct
                    + ext_scores
                        .iter()
                        .zip(&b[self.p..])
                        .map(|(r, c)| r[i] * c)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Combined coefficients on `Z` when every external score is linear.
    pub fn effective_coefficients(&self, linear: &[Option<Vec<f64>>]) -> Option<Vec<f64>> {
        let mut out = self.fit.beta_hat[..self.p].to_vec();
        for (m, coef) in linear.iter().enumerate() {
            let gamma = self.fit.beta_hat[self.p + m];
            for (o, c) in out.iter_mut().zip(coef.as_ref()?) {
                *o += gamma * c;
            }
        }
        Some(out)
    }
}

/// Stacked-regression baseline: the external scores enter as covariates.
pub fn stacked_baseline(dataset: &SurvivalDataset, exts: &[ExternalScores]) -> Result<StackedFit> {
    for ext in exts {
        ext.check_alignment(dataset)?;
    }
    let (n, p) = (dataset.n(), dataset.p());
    let mut z = Array2::zeros((n, p + exts.len()));
    z.slice_mut(s![.., ..p]).assign(dataset.covariates());
    for (m, ext) in exts.iter().enumerate() {
        for i in 0..n {
            z[[i, p + m]] = ext.scores[i];
        }
    }
    let mut names = dataset.covariate_names().to_vec();
    names.extend(exts.iter().map(|e| e.label.clone()));
    let fit = fit_cox(
        &dataset.with_covariates(z, names)?,
        &CoxFitOptions::default(),
    )?;
    Ok(StackedFit { fit, p })
}
