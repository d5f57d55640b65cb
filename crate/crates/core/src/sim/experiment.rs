use std::collections::BTreeMap;
use std::io::Write;

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::external::{build_external_model, stacked_baseline, ExternalModel};
use super::generate::{calibrate_censoring, simulate_cohort};
use super::rng::{stream, Stream};
use super::scenario::{Setting, SimScenario};
use crate::cox::{fit_cox, CoxFitOptions};
use crate::coxkl::CoxKlProblem;
use crate::error::{Error, Result};
use crate::metrics::c_index;
use crate::tuning::{
    default_eta_grid, product_eta_points, select_tuning_points, shared_eta_points, CvOptions,
};

/// Monte Carlo study of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: SimScenario,
    pub replicates: usize,
    /// Per-model weight grid for cross-validation; with several external
    /// models the search runs over its Cartesian power.
    pub eta_grid: Vec<f64>,
    /// Shared weights at which MSE and C-index curves are traced.
    pub sweep_grid: Vec<f64>,
    pub folds: usize,
}

/// Per-model grid used with two or more external models:
/// `0` and 9 log-spaced values on `[0.01, 100]`.
pub fn coarse_eta_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..9).map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / 8.0)))
        .collect()
}

impl ExperimentConfig {
    pub fn new(scenario: SimScenario, replicates: usize) -> Self {
        let eta_grid = if scenario.external_specs.len() > 1 {
            coarse_eta_grid()
        } else {
            default_eta_grid()
        };
        Self {
            scenario,
            replicates,
            eta_grid,
            sweep_grid: default_eta_grid(),
            folds: 5,
        }
    }

    fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.replicates == 0 {
            return Err(Error::InvalidArgument(
                "at least one replicate is required".into(),
            ));
        }
        if self.eta_grid.is_empty()
            || self
                .eta_grid
                .iter()
                .chain(&self.sweep_grid)
                .any(|e| !(*e >= 0.0) || !e.is_finite())
        {
            return Err(Error::InvalidArgument(
                "weight grids must be nonempty, finite and nonnegative".into(),
            ));
        }
        if self.folds < 2 || self.folds > self.scenario.n_internal {
            return Err(Error::InvalidArgument(format!(
                "invalid fold count {}",
                self.folds
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// Mean over coordinates of `|mean(beta_hat_j) - beta_j|`.
    pub bias: Option<f64>,
    /// Mean over coordinates of the across-replicate standard deviation.
    pub se: Option<f64>,
    /// Mean over coordinates of `mean((beta_hat_j - beta_j)^2)`.
    pub mse: Option<f64>,
    pub c_index_mean: f64,
    pub c_index_median: f64,
    pub c_index_q1: f64,
    pub c_index_q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eta: f64,
    pub mse: Option<f64>,
    pub c_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: SimScenario,
    pub aggregation: String,
    pub replicates_requested: usize,
    pub replicates_used: usize,
    pub failures: Vec<String>,
    pub censor_upper: Option<f64>,
    pub mean_censoring: f64,
    pub eta_grid: Vec<f64>,
    pub external_models: Vec<ExternalModel>,
    pub methods: Vec<MethodSummary>,
    pub sweep: Vec<SweepPoint>,
    /// Selected weights per replicate.
    pub selected_eta: Vec<Vec<f64>>,
    pub mean_selected_eta: Vec<f64>,
    pub median_selected_eta: Vec<f64>,
    /// Test-set C-index per replicate, by method.
    pub replicate_c_index: BTreeMap<String, Vec<f64>>,
}

impl ExperimentReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

pub const AGGREGATION: &str =
    "bias = mean_j |mean_r(b_rj) - beta_j|; se = mean_j sd_r(b_rj) (divisor R); \
mse = mean_j mean_r (b_rj - beta_j)^2; c_index on an independent test cohort";

struct Context {
    scenario: SimScenario,
    censor_upper: Option<f64>,
    models: Vec<ExternalModel>,
    eta_points: Vec<Vec<f64>>,
    sweep_grid: Vec<f64>,
    folds: usize,
}

struct Replicate {
    estimates: Vec<(String, Option<Vec<f64>>)>,
    c_index: Vec<(String, f64)>,
    selected_eta: Vec<f64>,
    sweep: Vec<(Vec<f64>, f64)>,
    censoring: f64,
}

fn labels(m: usize) -> Vec<String> {
    if m == 1 {
        vec!["external".into()]
    } else {
        (1..=m).map(|k| format!("external{k}")).collect()
    }
}

fn run_replicate(ctx: &Context, r: usize) -> Result<Replicate> {
    let sc = &ctx.scenario;
    let (train, _) = simulate_cohort(
        sc.setting,
        sc.n_internal,
        sc.p_l_internal,
        &sc.beta_true,
        ctx.censor_upper,
        &mut stream(sc.seed, Stream::Train, r as u64),
    )?;
    let (test, _) = simulate_cohort(
        sc.setting,
        sc.n_test,
        sc.p_l_internal,
        &sc.beta_true,
        ctx.censor_upper,
        &mut stream(sc.seed, Stream::Test, r as u64),
    )?;
    let names = labels(ctx.models.len());
    let exts = ctx
        .models
        .iter()
        .zip(&names)
        .map(|(m, l)| m.external_scores(l, &train))
        .collect::<Result<Vec<_>>>()?;
    let test_ext: Vec<Vec<f64>> = ctx
        .models
        .iter()
        .map(|m| m.scores(test.covariates()))
        .collect();
    let c_test = |scores: &[f64]| c_index(test.times(), test.statuses(), scores);
    let p = train.p();
    let lin = |beta: &[f64]| test.linear_predictor(beta);

    let internal = fit_cox(&train, &CoxFitOptions::default())?;
    let mut estimates = vec![("internal".to_string(), Some(internal.beta_hat.clone()))];
    let mut cs = vec![("internal".to_string(), c_test(&lin(&internal.beta_hat))?)];

    let mut selected_eta = Vec::new();
    let mut sweep = Vec::new();
    if !exts.is_empty() {
        let fold_seed: u64 = stream(sc.seed, Stream::Folds, r as u64).random();
        let report = select_tuning_points(
            &train,
            &exts,
            &ctx.eta_points,
            None,
            ctx.folds,
            fold_seed,
            &CvOptions::default(),
        )?;
        let problem = CoxKlProblem::new(&train, &exts, &report.selected_eta)?;
        let coxkl = problem.fit(&CoxFitOptions::default())?;
        cs.push(("coxkl".into(), c_test(&lin(&coxkl.beta_hat))?));
        estimates.push(("coxkl".into(), Some(coxkl.beta_hat)));
        selected_eta = report.selected_eta;

        let stacked = stacked_baseline(&train, &exts)?;
        cs.push((
            "stacked".into(),
            c_test(&stacked.risk_scores(test.covariates(), &test_ext))?,
        ));
        let linear: Vec<Option<Vec<f64>>> = ctx
            .models
            .iter()
            .map(|m| m.linear_coefficients(p))
            .collect();
        estimates.push(("stacked".into(), stacked.effective_coefficients(&linear)));

        for ((name, model), scores) in names.iter().zip(&ctx.models).zip(&test_ext) {
            cs.push((name.clone(), c_test(scores)?));
            estimates.push((name.clone(), model.linear_coefficients(p)));
        }

        for &eta in &ctx.sweep_grid {
            let fit = problem
                .with_etas(&vec![eta; exts.len()])?
                .fit(&CoxFitOptions::default())?;
            let c = c_test(&lin(&fit.beta_hat))?;
            sweep.push((fit.beta_hat, c));
        }
    }
    let censoring = train.statuses().iter().filter(|&&d| !d).count() as f64 / train.n() as f64;
    Ok(Replicate {
        estimates,
        c_index: cs,
        selected_eta,
        sweep,
        censoring,
    })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `(bias, se, mse)` aggregated over coordinates.
pub fn estimation_summary(estimates: &[Vec<f64>], truth: &[f64]) -> (f64, f64, f64) {
    let r = estimates.len() as f64;
    let (mut bias, mut se, mut mse) = (0.0, 0.0, 0.0);
    for (j, &b0) in truth.iter().enumerate() {
        let m = estimates.iter().map(|e| e[j]).sum::<f64>() / r;
        bias += (m - b0).abs();
        se += (estimates.iter().map(|e| (e[j] - m).powi(2)).sum::<f64>() / r).sqrt();
        mse += estimates.iter().map(|e| (e[j] - b0).powi(2)).sum::<f64>() / r;
    }
    let p = truth.len() as f64;
    (bias / p, se / p, mse / p)
}

/// Runs every replicate of `config` on `jobs` threads (all cores when `None`).
/// The report does not depend on the thread count.
pub fn run_experiment(config: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentReport> {
    config.validate()?;
    let sc = config.scenario.clone();
    let censor_upper = calibrate_censoring(
        sc.setting,
        sc.p_l_internal,
        &sc.beta_true,
        sc.censoring_target,
        0.005,
        sc.seed,
    )?;
    let models = sc
        .external_specs
        .iter()
        .enumerate()
        .map(|(m, spec)| {
            build_external_model(&sc, spec, &mut stream(sc.seed, Stream::External, m as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = models.len();
    let eta_points = if m > 1 {
        product_eta_points(&config.eta_grid, m)
    } else {
        shared_eta_points(&config.eta_grid, m)
    };
    let ctx = Context {
        scenario: sc.clone(),
        censor_upper,
        models,
        eta_points,
        sweep_grid: config.sweep_grid.clone(),
        folds: config.folds,
    };
    info!("{}: {} replicates", sc.name, config.replicates);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<Replicate>> = pool.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| run_replicate(&ctx, r))
            .collect()
    });

    let mut failures = Vec::new();
    let mut used = Vec::new();
    for (r, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(rep) => used.push(rep),
            Err(e) => {
                warn!("replicate {r} failed: {e}");
                failures.push(format!("replicate {r}: {e}"));
            }
        }
    }
    if used.is_empty() {
        return Err(Error::Numerical(format!(
            "every replicate failed: {failures:?}"
        )));
    }
    let truth: Option<&[f64]> = (sc.setting == Setting::I).then_some(&sc.beta_true[..]);

    let mut methods = Vec::new();
    let mut replicate_c_index = BTreeMap::new();
    for (k, (name, _)) in used[0].c_index.iter().enumerate() {
        let cs: Vec<f64> = used.iter().map(|u| u.c_index[k].1).collect();
        let ests: Option<Vec<Vec<f64>>> = used
            .iter()
            .map(|u| {
                u.estimates
                    .iter()
                    .find(|e| &e.0 == name)
                    .and_then(|e| e.1.clone())
            })
            .collect();
        let (bias, se, mse) = match (truth, ests) {
            (Some(t), Some(e)) => {
                let (b, s, m) = estimation_summary(&e, t);
                (Some(b), Some(s), Some(m))
            }
            _ => (None, None, None),
        };
        let sc_sorted = sorted(&cs);
        methods.push(MethodSummary {
            method: name.clone(),
            bias,
            se,
            mse,
            c_index_mean: mean(&cs),
            c_index_median: quantile(&sc_sorted, 0.5),
            c_index_q1: quantile(&sc_sorted, 0.25),
            c_index_q3: quantile(&sc_sorted, 0.75),
        });
        replicate_c_index.insert(name.clone(), cs);
    }

    let sweep = if m == 0 {
        Vec::new()
    } else {
        config
            .sweep_grid
            .iter()
            .enumerate()
            .map(|(g, &eta)| {
                let betas: Vec<Vec<f64>> = used.iter().map(|u| u.sweep[g].0.clone()).collect();
                let cs: Vec<f64> = used.iter().map(|u| u.sweep[g].1).collect();
                SweepPoint {
                    eta,
                    mse: truth.map(|t| estimation_summary(&betas, t).2),
                    c_index: mean(&cs),
                }
            })
            .collect()
    };

    let selected_eta: Vec<Vec<f64>> = used.iter().map(|u| u.selected_eta.clone()).collect();
    let (mean_selected_eta, median_selected_eta) = (0..m)
        .map(|k| {
            let v: Vec<f64> = selected_eta.iter().map(|e| e[k]).collect();
            (mean(&v), quantile(&sorted(&v), 0.5))
        })
        .unzip();
    let censoring: Vec<f64> = used.iter().map(|u| u.censoring).collect();
    Ok(ExperimentReport {
        scenario: sc,
        aggregation: AGGREGATION.into(),
        replicates_requested: config.replicates,
        replicates_used: used.len(),
        failures,
        censor_upper,
        mean_censoring: mean(&censoring),
        eta_grid: config.eta_grid.clone(),
        external_models: ctx.models,
        methods,
        sweep,
        selected_eta,
        mean_selected_eta,
        median_selected_eta,
        replicate_c_index,
    })
}

pub fn run_setting1(config: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentReport> {
    if config.scenario.setting != Setting::I {
        return Err(Error::InvalidArgument("scenario is not Setting I".into()));
    }
    run_experiment(config, jobs)
}

pub fn run_setting2(config: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentReport> {
    if config.scenario.setting != Setting::II {
        return Err(Error::InvalidArgument("scenario is not Setting II".into()));
    }
    run_experiment(config, jobs)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

/// One row per (cell, method): `cell,method,bias,se,mse,c_index`.
pub fn write_table_csv<W: Write>(reports: &[ExperimentReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell", "method", "bias", "se", "mse", "c_index"])?;
    for rep in reports {
        for m in &rep.methods {
            w.write_record([
                rep.scenario.name.clone(),
                m.method.clone(),
                opt(m.bias),
                opt(m.se),
                opt(m.mse),
                format!("{}", m.c_index_mean),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long-format curves `eta,metric,value,method,cell`.
///
/// * `coxkl` rows trace `mse` and `c_index` over the sweep grid;
/// * every method contributes a `c_index` row per replicate (empty `eta`),
///   for box plots;
/// * `selected_eta_<m>` rows give each replicate's selected weight for
///   external model `m` in the `eta` column (value = replicate index).
pub fn write_curves_csv<W: Write>(reports: &[ExperimentReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["eta", "metric", "value", "method", "cell"])?;
    for rep in reports {
        let cell = rep.scenario.name.as_str();
        for pt in &rep.sweep {
            let eta = format!("{}", pt.eta);
            if let Some(mse) = pt.mse {
                w.write_record([eta.as_str(), "mse", &format!("{mse}"), "coxkl", cell])?;
            }
            w.write_record([
                eta.as_str(),
                "c_index",
                &format!("{}", pt.c_index),
                "coxkl",
                cell,
            ])?;
        }
        for m in &rep.methods {
            if let Some(mse) = m.mse {
                w.write_record(["", "mse", &format!("{mse}"), m.method.as_str(), cell])?;
            }
            for c in &rep.replicate_c_index[&m.method] {
                w.write_record(["", "c_index", &format!("{c}"), m.method.as_str(), cell])?;
            }
        }
        for (r, etas) in rep.selected_eta.iter().enumerate() {
            for (k, e) in etas.iter().enumerate() {
                let metric = format!("selected_eta_{}", k + 1);
                w.write_record([
                    format!("{e}").as_str(),
                    &metric,
                    &format!("{r}"),
                    "coxkl",
                    cell,
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_satisfies_bias_variance_identity() {
        let est = vec![vec![0.1, 1.0], vec![0.5, 1.4], vec![0.3, 0.9]];
        let truth = [0.2, 1.0];
        let (_, _, mse) = estimation_summary(&est, &truth);
        let mut expected = 0.0;
        for j in 0..2 {
            let m = est.iter().map(|e| e[j]).sum::<f64>() / 3.0;
            let var = est.iter().map(|e| (e[j] - m).powi(2)).sum::<f64>() / 3.0;
            expected += (m - truth[j]).powi(2) + var;
        }
        assert!((mse - expected / 2.0).abs() < 1e-15);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }
}
