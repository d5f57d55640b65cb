//! Internal-only Cox proportional hazards fitting.
//!
//! The log-partial likelihood and its derivatives are computed through the
//! shared risk-set kernel with event masses equal to the event indicators.
//! [`fit_cox`] and [`crate::coxkl::fit_coxkl`] run the same Newton–Raphson
//! engine; only the event masses differ.
//!
//! Scaling: [`log_partial_likelihood`] and [`score_and_information`] return
//! plain sums over event times. Fit diagnostics (`gradient_norm`,
//! `information`) use the per-subject scaling, i.e. divided by `n`.

use log::{debug, warn};
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::kernel::RiskSetKernel;
use crate::linalg;

/// Convergence controls for Newton–Raphson.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxFitOptions {
    pub max_iterations: usize,
    /// Relative objective change `|df| / (|f| + 1)` treated as stalled.
    pub objective_tolerance: f64,
    /// Sup-norm of the per-subject score required for convergence.
    pub gradient_tolerance: f64,
    pub step_halving_max: usize,
}

impl Default for CoxFitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            objective_tolerance: 1e-9,
            gradient_tolerance: 1e-8,
            step_halving_max: 20,
        }
    }
}

impl CoxFitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0
            || self.step_halving_max == 0
            || !(self.objective_tolerance > 0.0)
            || !(self.gradient_tolerance > 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "fit options must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Newton steps whose sup-norm exceeds this (relative to `1 + |beta|`) keep a
/// fit from being declared converged even when the score is tiny; this is
/// how monotone likelihoods (coefficients drifting to infinity) are caught.
const STEP_TOLERANCE: f64 = 1e-4;

/// Result of a Cox or CoxKL fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxKLFit {
    #[serde(rename = "beta")]
    pub beta_hat: Vec<f64>,
    pub eta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Penalized log-partial likelihood at `beta_hat` (sum over event times).
    pub objective: f64,
    /// Sup-norm of the per-subject score at `beta_hat`.
    pub gradient_norm: f64,
    /// Per-subject information matrix at `beta_hat`.
    #[serde(skip)]
    pub information: Option<Array2<f64>>,
    /// Naive `sqrt(diag(I^-1))`; `NaN` (JSON `null`) for pinned coefficients.
    #[serde(
        serialize_with = "serialize_nullable",
        deserialize_with = "deserialize_nullable"
    )]
    pub std_errors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Objective at the start and after each accepted Newton step.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

fn serialize_nullable<S: Serializer>(
    v: &Option<Vec<f64>>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    v.as_ref()
        .map(|xs| {
            xs.iter()
                .map(|x| x.is_finite().then_some(*x))
                .collect::<Vec<_>>()
        })
        .serialize(s)
}

fn deserialize_nullable<'de, D: Deserializer<'de>>(
    d: D,
) -> std::result::Result<Option<Vec<f64>>, D::Error> {
    let raw = Option::<Vec<Option<f64>>>::deserialize(d)?;
    Ok(raw.map(|xs| xs.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect()))
}

impl CoxKLFit {
    /// Linear predictor `Z beta_hat` for every subject of `dataset`.
    pub fn risk_scores(&self, dataset: &SurvivalDataset) -> Vec<f64> {
        dataset.linear_predictor(&self.beta_hat)
    }
}

pub(crate) fn check_beta(dataset: &SurvivalDataset, beta: &[f64]) -> Result<()> {
    if beta.len() != dataset.p() {
        return Err(Error::InvalidArgument(format!(
            "beta has length {}, dataset has {} covariates",
            beta.len(),
            dataset.p()
        )));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Domain(format!("beta must be finite, got {beta:?}")));
    }
    Ok(())
}

pub(crate) fn event_indicators(dataset: &SurvivalDataset) -> Vec<f64> {
    dataset
        .statuses()
        .iter()
        .map(|&s| if s { 1.0 } else { 0.0 })
        .collect()
}

/// Unscaled log-likelihood, score and information for given event masses.
pub(crate) fn derivatives(
    dataset: &SurvivalDataset,
    event_mass: &[f64],
    beta: &[f64],
) -> (f64, Array1<f64>, Array2<f64>) {
    let theta = dataset.linear_predictor(beta);
    let kernel = RiskSetKernel::new(dataset, &theta);
    let z = dataset.covariates();
    let grad_theta = Array1::from(kernel.theta_gradient(event_mass));
    let score = z.t().dot(&grad_theta);
    let p = dataset.p();
    let mut info = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        let col = z.column(j).to_vec();
        let mz = Array1::from(kernel.hessian_apply(&col));
        let hz = z.t().dot(&mz);
        info.column_mut(j).assign(&hz);
    }
    // symmetrize rounding noise
    for i in 0..p {
        for j in (i + 1)..p {
            let avg = 0.5 * (info[[i, j]] + info[[j, i]]);
            info[[i, j]] = avg;
            info[[j, i]] = avg;
        }
    }
    (kernel.log_likelihood(event_mass), score, info)
}

pub(crate) fn objective_value(dataset: &SurvivalDataset, event_mass: &[f64], beta: &[f64]) -> f64 {
    let theta = dataset.linear_predictor(beta);
    RiskSetKernel::new(dataset, &theta).log_likelihood(event_mass)
}

/// Log-partial likelihood with Breslow ties:
/// `sum_k [ s_k' beta - d_k log sum_{i in R_k} exp(Z_i' beta) ]`.
pub fn log_partial_likelihood(dataset: &SurvivalDataset, beta: &[f64]) -> Result<f64> {
    check_beta(dataset, beta)?;
    Ok(objective_value(dataset, &event_indicators(dataset), beta))
}

/// Score vector and observed information of the log-partial likelihood
/// (plain sums, not divided by `n`).
pub fn score_and_information(
    dataset: &SurvivalDataset,
    beta: &[f64],
) -> Result<(Vec<f64>, Array2<f64>)> {
    check_beta(dataset, beta)?;
    let (_, score, info) = derivatives(dataset, &event_indicators(dataset), beta);
    Ok((score.to_vec(), info))
}

/// Maximum partial likelihood estimate by Newton–Raphson from `beta = 0`.
pub fn fit_cox(dataset: &SurvivalDataset, opts: &CoxFitOptions) -> Result<CoxKLFit> {
    newton_fit(dataset, &event_indicators(dataset), Vec::new(), opts)
}

fn sup_norm(v: ArrayView1<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton–Raphson with step halving on the generalized partial likelihood
/// defined by `event_mass`. Constant covariates are pinned at zero.
pub(crate) fn newton_fit(
    dataset: &SurvivalDataset,
    event_mass: &[f64],
    eta: Vec<f64>,
    opts: &CoxFitOptions,
) -> Result<CoxKLFit> {
    opts.validate()?;
    let n = dataset.n().max(1) as f64;
    let p = dataset.p();
    let constant = dataset.constant_columns();
    let free: Vec<usize> = (0..p).filter(|&j| !constant[j]).collect();
    let mut warnings = Vec::new();
    if free.len() < p {
        let pinned: Vec<usize> = (0..p).filter(|&j| constant[j]).collect();
        warn!("constant covariates {pinned:?} pinned at zero");
        warnings.push(format!("constant covariates pinned at zero: {pinned:?}"));
    }
    let restrict = |score: &Array1<f64>, info: &Array2<f64>| {
        let g = Array1::from_iter(free.iter().map(|&j| score[j] / n));
        let h = Array2::from_shape_fn((free.len(), free.len()), |(a, b)| {
            info[[free[a], free[b]]] / n
        });
        (g, h)
    };

    let mut beta = vec![0.0; p];
    let (mut loglik, mut score, mut info) = derivatives(dataset, event_mass, &beta);
    let mut iterations = 0;
    let mut converged = false;
    let mut ridged = false;
    let mut objective_trace = vec![loglik];

    loop {
        let (g, h) = restrict(&score, &info);
        let gradient_norm = sup_norm(g.view());
        let step = if free.is_empty() {
            Array1::zeros(0)
        } else {
            let (l, used_ridge) = linalg::stabilized_cholesky(&h).ok_or_else(|| {
                Error::Numerical("information matrix could not be factorized".into())
            })?;
            ridged |= used_ridge;
            linalg::cholesky_solve(&l, &g)
        };
        let beta_scale = 1.0 + beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        if gradient_norm <= opts.gradient_tolerance
            && sup_norm(step.view()) <= STEP_TOLERANCE * beta_scale
        {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }

        let f0 = loglik / n;
        let slack = 4.0 * f64::EPSILON * (f0.abs() + 1.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.step_halving_max {
            let mut trial = beta.clone();
            for (a, &j) in free.iter().enumerate() {
                trial[j] += t * step[a];
            }
            let f1 = objective_value(dataset, event_mass, &trial) / n;
            if f1.is_finite() && f1 >= f0 - slack {
                accepted = Some((trial, f1));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, f1)) = accepted else {
            break;
        };
        iterations += 1;
        beta = trial;
        (loglik, score, info) = derivatives(dataset, event_mass, &beta);
        objective_trace.push(loglik);
        let stalled = (f1 - f0).abs() / (f0.abs() + 1.0) < opts.objective_tolerance;
        if stalled && sup_norm(restrict(&score, &info).0.view()) <= opts.gradient_tolerance {
            // Flat objective with a still-large Newton step: recheck once more
            // and stop; convergence is decided by the step criterion.
            let (g, h) = restrict(&score, &info);
            if let Some((l, _)) = linalg::stabilized_cholesky(&h) {
                let step = linalg::cholesky_solve(&l, &g);
                let beta_scale = 1.0 + beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
                converged = sup_norm(step.view()) <= STEP_TOLERANCE * beta_scale;
            }
            break;
        }
    }

    if ridged {
        debug!("information matrix was ridge-stabilized");
        warnings.push("information matrix ill-conditioned; ridge-stabilized solve".into());
    }
    if !converged {
        warnings.push("Newton-Raphson did not converge (possible monotone likelihood)".into());
    }

    let (g, h) = restrict(&score, &info);
    let gradient_norm = sup_norm(g.view());
    let std_errors = linalg::stabilized_cholesky(&h).map(|(l, _)| {
        let inv = linalg::inverse_from_cholesky(&l);
        let mut se = vec![f64::NAN; p];
        for (a, &j) in free.iter().enumerate() {
            se[j] = (inv[[a, a]] / n).sqrt();
        }
        se
    });
    Ok(CoxKLFit {
        beta_hat: beta,
        eta,
        converged,
        iterations,
        objective: loglik,
        gradient_norm,
        information: Some(info / n),
        std_errors,
        warnings,
        objective_trace,
    })
}
