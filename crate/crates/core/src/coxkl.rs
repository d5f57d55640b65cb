//! CoxKL: the Cox partial likelihood penalized by the partial-likelihood
//! KL divergence from one or more external risk scores.
//!
//! External scores `r_i` induce conditional failure densities on each risk
//! set, `w_i(t_k) = exp(r_i) / sum_{R_k} exp(r)`, just as the internal model
//! induces `q_i(t_k; beta)`. The accumulated divergence
//! `D(beta) = sum_k d_k sum_{i in R_k} w_i log(w_i / q_i)` only enters the
//! objective through a linear term, so
//!
//! ```text
//! l(beta) - sum_m eta_m D_m(beta)
//!     = (1 + sum eta) * sum_k [ ((s_k + sum_m eta_m d_k Zt_k^(m)) / (1 + sum eta))' beta
//!                               - d_k log sum_{R_k} exp(Z' beta) ] + const
//! ```
//!
//! where `s_k` sums the covariates of subjects failing at `t_k` and `Zt_k`
//! is the external-score-weighted mean covariate of the risk set. In
//! linear-predictor space the numerator becomes `sum_i a_i Z_i' beta` with
//! event masses `a_i = (delta_i + sum_m eta_m Lambda_i^(m)) / (1 + sum eta)`,
//! `Lambda^(m)` being the Breslow compensator under external score `m`. A
//! CoxKL fit is therefore an ordinary Cox fit with fractional event masses.

use std::collections::HashMap;
use std::io::Read;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cox::{self, CoxFitOptions, CoxKLFit};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::kernel::RiskSetKernel;
use crate::sparse::SparseVector;

/// Risk scores `r(Z_i, beta_ext)` from one external model, aligned with the
/// records of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScores {
    pub label: String,
    pub scores: Vec<f64>,
    /// Present when the scores are the linear predictor `Z beta_ext`.
    pub linear_coefficients: Option<SparseVector>,
}

impl ExternalScores {
    pub fn new(label: impl Into<String>, scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Validation(format!(
                "external score {} is not finite",
                i + 1
            )));
        }
        Ok(Self {
            label: label.into(),
            scores,
            linear_coefficients: None,
        })
    }

    /// Scores `Z beta_ext` for the subjects of `dataset`.
    pub fn linear(
        label: impl Into<String>,
        dataset: &SurvivalDataset,
        coefficients: SparseVector,
    ) -> Result<Self> {
        if coefficients.len != dataset.p() {
            return Err(Error::Alignment(format!(
                "external coefficients have length {}, dataset has {} covariates",
                coefficients.len,
                dataset.p()
            )));
        }
        let z = dataset.covariates();
        let scores = (0..dataset.n())
            .map(|i| {
                coefficients
                    .entries
                    .iter()
                    .map(|&(j, b)| z[[i, j]] * b)
                    .sum()
            })
            .collect();
        let mut ext = Self::new(label, scores)?;
        ext.linear_coefficients = Some(coefficients);
        Ok(ext)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn check_alignment(&self, dataset: &SurvivalDataset) -> Result<()> {
        if self.scores.len() != dataset.n() {
            return Err(Error::Alignment(format!(
                "`{}` has {} scores for {} records",
                self.label,
                self.scores.len(),
                dataset.n()
            )));
        }
        Ok(())
    }

    /// Scores for the given rows, keeping the same order as
    /// [`SurvivalDataset::subset`].
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            label: self.label.clone(),
            scores: rows.iter().map(|&i| self.scores[i]).collect(),
            linear_coefficients: self.linear_coefficients.clone(),
        }
    }
}

/// Reads an `id,score` or `id,score_1,...,score_M` file and aligns it to the
/// dataset by id. Every dataset id must appear exactly once, and no other ids.
pub fn load_scores<R: Read>(source: R, dataset: &SurvivalDataset) -> Result<Vec<ExternalScores>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.len() < 2 || headers.get(0) != Some("id") {
        return Err(Error::Parse {
            row: 0,
            column: headers.get(0).unwrap_or("").to_string(),
            message: "scores file header must be `id,score[,...]`".into(),
        });
    }
    let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let position: HashMap<&str, usize> = dataset
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut columns = vec![vec![f64::NAN; dataset.n()]; labels.len()];
    let mut seen = vec![false; dataset.n()];
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record?;
        let id = record.get(0).unwrap_or("");
        let &i = position.get(id).ok_or_else(|| {
            Error::Alignment(format!("row {row}: id `{id}` is not in the dataset"))
        })?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Alignment(format!("row {row}: duplicate id `{id}`")));
        }
        for (m, label) in labels.iter().enumerate() {
            let raw = record.get(m + 1).unwrap_or("");
            columns[m][i] = raw.parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: label.clone(),
                message: format!("`{raw}` is not a number"),
            })?;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Alignment(format!(
            "dataset id `{}` has no score",
            dataset.ids()[i]
        )));
    }
    labels
        .into_iter()
        .zip(columns)
        .map(|(label, scores)| ExternalScores::new(label, scores))
        .collect()
}

/// Pseudo-covariates `Zt_k`, one row per event time.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoCovariates {
    pub z_tilde: Array2<f64>,
}

/// External-score-weighted average of the at-risk covariates at each event time.
pub fn external_weighted_covariates(
    dataset: &SurvivalDataset,
    ext: &ExternalScores,
) -> Result<PseudoCovariates> {
    ext.check_alignment(dataset)?;
    let kernel = RiskSetKernel::new(dataset, &ext.scores);
    let k_count = dataset.event_times().len();
    let mut z_tilde = Array2::zeros((k_count, dataset.p()));
    for (j, col) in dataset.covariates().columns().into_iter().enumerate() {
        let means = kernel.risk_means(&col.to_vec());
        z_tilde.column_mut(j).assign(&ndarray::Array1::from(means));
    }
    Ok(PseudoCovariates { z_tilde })
}

/// Accumulated partial-likelihood KL divergence of the internal model at
/// `beta` from the external conditional densities. Tied events at `t_k`
/// each contribute one conditional experiment.
pub fn kl_divergence(dataset: &SurvivalDataset, ext: &ExternalScores, beta: &[f64]) -> Result<f64> {
    ext.check_alignment(dataset)?;
    cox::check_beta(dataset, beta)?;
    let theta = dataset.linear_predictor(beta);
    let internal = RiskSetKernel::new(dataset, &theta);
    let external = RiskSetKernel::new(dataset, &ext.scores);
    let gap: Vec<f64> = ext.scores.iter().zip(&theta).map(|(r, t)| r - t).collect();
    let mean_gap = external.risk_means(&gap);
    let total: f64 = mean_gap
        .iter()
        .enumerate()
        .map(|(k, g)| dataset.event_count(k) as f64 * (g - external.log_s0(k) + internal.log_s0(k)))
        .sum();
    Ok(total.max(0.0))
}

fn check_etas(etas: &[f64], m: usize) -> Result<()> {
    if etas.len() != m {
        return Err(Error::InvalidArgument(format!(
            "{} integration weights for {m} external scores",
            etas.len()
        )));
    }
    if let Some(e) = etas.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
        return Err(Error::Domain(format!(
            "integration weights must be finite and nonnegative, got {e}"
        )));
    }
    Ok(())
}

/// A dataset paired with external scores and integration weights.
///
/// Building the problem computes each external compensator once; changing
/// the weights with [`CoxKlProblem::with_etas`] reuses them.
#[derive(Debug, Clone)]
pub struct CoxKlProblem<'a> {
    dataset: &'a SurvivalDataset,
    etas: Vec<f64>,
    external_mass: Vec<Vec<f64>>,
    event_mass: Vec<f64>,
}

impl<'a> CoxKlProblem<'a> {
    pub fn new(
        dataset: &'a SurvivalDataset,
        exts: &[ExternalScores],
        etas: &[f64],
    ) -> Result<Self> {
        for ext in exts {
            ext.check_alignment(dataset)?;
        }
        check_etas(etas, exts.len())?;
        let external_mass = exts
            .iter()
            .map(|ext| RiskSetKernel::new(dataset, &ext.scores).compensator())
            .collect();
        let mut problem = Self {
            dataset,
            etas: Vec::new(),
            external_mass,
            event_mass: Vec::new(),
        };
        problem.set_etas(etas)?;
        Ok(problem)
    }

    /// Internal-only problem (no external scores).
    pub fn internal(dataset: &'a SurvivalDataset) -> Self {
        Self {
            dataset,
            etas: Vec::new(),
            external_mass: Vec::new(),
            event_mass: cox::event_indicators(dataset),
        }
    }

    fn set_etas(&mut self, etas: &[f64]) -> Result<()> {
        check_etas(etas, self.external_mass.len())?;
        let total: f64 = etas.iter().sum();
        let mut mass = cox::event_indicators(self.dataset);
        if total > 0.0 {
            for (eta, ext) in etas.iter().zip(&self.external_mass) {
                if *eta > 0.0 {
                    for (a, l) in mass.iter_mut().zip(ext) {
                        *a += eta * l;
                    }
                }
            }
            for a in &mut mass {
                *a /= 1.0 + total;
            }
        }
        self.etas = etas.to_vec();
        self.event_mass = mass;
        Ok(())
    }

    pub fn with_etas(&self, etas: &[f64]) -> Result<Self> {
        let mut next = self.clone();
        next.set_etas(etas)?;
        Ok(next)
    }

    pub fn dataset(&self) -> &'a SurvivalDataset {
        self.dataset
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    pub fn n_external(&self) -> usize {
        self.external_mass.len()
    }

    /// Per-subject event masses `a_i`; they sum to the number of events.
    pub fn event_mass(&self) -> &[f64] {
        &self.event_mass
    }

    /// Closed-form CoxKL objective (sum over event times, not divided by `n`).
    pub fn objective(&self, beta: &[f64]) -> Result<f64> {
        cox::check_beta(self.dataset, beta)?;
        Ok(cox::objective_value(self.dataset, &self.event_mass, beta))
    }

    /// Score `U_eta` and information `H_eta`, both divided by `n`.
    pub fn score_and_information(&self, beta: &[f64]) -> Result<(Vec<f64>, Array2<f64>)> {
        cox::check_beta(self.dataset, beta)?;
        let n = self.dataset.n() as f64;
        let (_, score, info) = cox::derivatives(self.dataset, &self.event_mass, beta);
        Ok((score.iter().map(|s| s / n).collect(), info / n))
    }

    pub fn fit(&self, opts: &CoxFitOptions) -> Result<CoxKLFit> {
        cox::newton_fit(self.dataset, &self.event_mass, self.etas.clone(), opts)
    }
}

/// CoxKL objective `sum_k [ ((s_k + sum_m eta_m d_k Zt_k^(m)) / (1 + sum eta))' beta - d_k log S0_k ]`.
pub fn coxkl_objective(
    dataset: &SurvivalDataset,
    exts: &[ExternalScores],
    etas: &[f64],
    beta: &[f64],
) -> Result<f64> {
    CoxKlProblem::new(dataset, exts, etas)?.objective(beta)
}

/// Per-subject score `U_eta(beta)` and information `H_eta(beta)`.
pub fn coxkl_score_and_information(
    dataset: &SurvivalDataset,
    exts: &[ExternalScores],
    etas: &[f64],
    beta: &[f64],
) -> Result<(Vec<f64>, Array2<f64>)> {
    CoxKlProblem::new(dataset, exts, etas)?.score_and_information(beta)
}

/// CoxKL estimate `beta_hat(eta)` by Newton–Raphson.
pub fn fit_coxkl(
    dataset: &SurvivalDataset,
    exts: &[ExternalScores],
    etas: &[f64],
    opts: &CoxFitOptions,
) -> Result<CoxKLFit> {
    CoxKlProblem::new(dataset, exts, etas)?.fit(opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn three_at_risk() -> SurvivalDataset {
        SurvivalDataset::from_arrays(
            vec![1.0, 2.0, 3.0],
            vec![true, false, false],
            array![[0.0], [1.0], [2.0]],
        )
        .unwrap()
    }

    #[test]
    fn weighted_covariates_hand_value() {
        let ds = three_at_risk();
        let ext = ExternalScores::new("e", vec![0.0, 2f64.ln(), 3f64.ln()]).unwrap();
        let zt = external_weighted_covariates(&ds, &ext).unwrap();
        assert!((zt.z_tilde[[0, 0]] - 8.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn constant_scores_give_plain_means() {
        let ds = SurvivalDataset::from_arrays(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![true, true, false, true],
            array![[1.0, 2.0], [3.0, -1.0], [5.0, 0.0], [7.0, 4.0]],
        )
        .unwrap();
        let ext = ExternalScores::new("c", vec![0.7; 4]).unwrap();
        let zt = external_weighted_covariates(&ds, &ext).unwrap().z_tilde;
        assert!((zt[[0, 0]] - 4.0).abs() < 1e-14 && (zt[[0, 1]] - 1.25).abs() < 1e-14);
        assert!((zt[[1, 0]] - 5.0).abs() < 1e-14);
        // last risk set is the single subject at t = 4
        assert_eq!(zt.row(2).to_vec(), vec![7.0, 4.0]);
    }

    #[test]
    fn kl_hand_value_and_zero_cases() {
        let ds =
            SurvivalDataset::from_arrays(vec![1.0, 1.0], vec![true, false], array![[1.0], [0.0]])
                .unwrap();
        let ext = ExternalScores::new("e", vec![0.0, 0.0]).unwrap();
        let d = kl_divergence(&ds, &ext, &[3f64.ln()]).unwrap();
        assert!((d - 0.14384103622589042).abs() < 1e-14);

        let ds = three_at_risk();
        let lin = ExternalScores::linear("lin", &ds, SparseVector::from_dense(&[0.8])).unwrap();
        assert!(kl_divergence(&ds, &lin, &[0.8]).unwrap().abs() < 1e-14);

        // only the last subject fails, so its risk set is a singleton
        let singletons = SurvivalDataset::from_arrays(
            vec![1.0, 2.0, 3.0],
            vec![false, false, true],
            array![[0.0], [1.0], [2.0]],
        )
        .unwrap();
        let ext = ExternalScores::new("e", vec![5.0, -1.0, 2.0]).unwrap();
        assert_eq!(kl_divergence(&singletons, &ext, &[4.0]).unwrap(), 0.0);
    }

    #[test]
    fn zero_eta_reduces_to_partial_likelihood() {
        let ds = three_at_risk();
        let ext = ExternalScores::new("e", vec![0.3, -0.2, 1.0]).unwrap();
        let beta = [0.37];
        let obj = coxkl_objective(&ds, std::slice::from_ref(&ext), &[0.0], &beta).unwrap();
        assert_eq!(obj, cox::log_partial_likelihood(&ds, &beta).unwrap());
    }

    #[test]
    fn constant_scores_unit_eta_hand_value() {
        // z = (1, 0), events at 1 and 2; constant scores make Zt_k the
        // at-risk mean: Zt_1 = 1/2, Zt_2 = 0. Numerators: (1 + 1/2)/2 and 0.
        let ds =
            SurvivalDataset::from_arrays(vec![1.0, 2.0], vec![true, true], array![[1.0], [0.0]])
                .unwrap();
        let ext = ExternalScores::new("c", vec![2.0, 2.0]).unwrap();
        let beta = 0.9f64;
        let expected = 0.75 * beta - (beta.exp() + 1.0).ln();
        let obj = coxkl_objective(&ds, &[ext], &[1.0], &[beta]).unwrap();
        assert!((obj - expected).abs() < 1e-14);
    }

    #[test]
    fn negative_eta_rejected() {
        let ds = three_at_risk();
        let ext = ExternalScores::new("e", vec![0.0; 3]).unwrap();
        assert!(matches!(
            coxkl_objective(&ds, &[ext], &[-0.1], &[0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn score_file_alignment() {
        let ds = three_at_risk();
        let exts = load_scores(
            "id,score_1,score_2\n3,0.5,1\n1,0.1,2\n2,0.2,3\n".as_bytes(),
            &ds,
        )
        .unwrap();
        assert_eq!(exts.len(), 2);
        assert_eq!(exts[0].scores, vec![0.1, 0.2, 0.5]);
        assert_eq!(exts[1].label, "score_2");
        assert!(matches!(
            load_scores("id,score\n1,0\n2,0\n9,0\n".as_bytes(), &ds),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(
            load_scores("id,score\n1,0\n2,0\n".as_bytes(), &ds),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(
            load_scores("id,score\n1,0\n1,0\n2,0\n".as_bytes(), &ds),
            Err(Error::Alignment(_))
        ));
    }
}
