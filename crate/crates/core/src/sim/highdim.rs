//! Synthetic genotype cohort for the high-dimensional CoxKL-LASSO pipeline:
//! SNP dosages, a sparse true polygenic hazard, a published-style external
//! score with perturbed weights, heavy censoring, a 3:1 train/test split,
//! joint (eta, lambda) cross-validation and percentile risk groups.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::rng::{stream, Stream};
use crate::coxkl::{CoxKlProblem, ExternalScores};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::lasso::{self, LassoOptions};
use crate::metrics::{c_index, risk_stratify, StepFunction};
use crate::sparse::SparseVector;
use crate::tuning::{select_tuning_points, shared_eta_points, CvOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighDimConfig {
    pub n: usize,
    pub p: usize,
    /// SNPs with a nonzero true effect.
    pub n_causal: usize,
    pub censoring_target: f64,
    pub train_fraction: f64,
    pub eta_grid: Vec<f64>,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub folds: usize,
    /// Percentile cutpoints for risk groups.
    pub cutpoints: Vec<f64>,
    pub seed: u64,
}

impl Default for HighDimConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            p: 10_000,
            n_causal: 46,
            censoring_target: 0.82,
            train_fraction: 0.75,
            eta_grid: vec![0.0, 1.0, 3.0, 10.0],
            n_lambda: 10,
            lambda_min_ratio: 0.05,
            folds: 5,
            cutpoints: vec![20.0, 80.0],
            seed: 1,
        }
    }
}

/// Simulated cohort with its truth and external weights.
#[derive(Debug, Clone)]
pub struct HighDimData {
    pub dataset: SurvivalDataset,
    pub beta_true: SparseVector,
    pub external_weights: SparseVector,
}

fn genotypes<R: Rng + ?Sized>(n: usize, freqs: &[f64], rng: &mut R) -> Array2<f64> {
    let mut z = Array2::zeros((n, freqs.len()));
    for mut row in z.rows_mut() {
        for (v, &f) in row.iter_mut().zip(freqs) {
            *v = (rng.random::<f64>() < f) as u8 as f64 + (rng.random::<f64>() < f) as u8 as f64;
        }
    }
    z
}

/// Dosages `0/1/2` with allele frequencies on `[0.05, 0.5]`; the first
/// `n_causal` SNPs carry effects of size `0.2..0.4` with alternating sign.
/// External weights keep 80% of the causal SNPs with multiplicative noise
/// and add small weights on as many null SNPs, mimicking a score built in
/// another population. Censoring is uniform with its bound calibrated on a
/// separate sample of the causal genotypes.
pub fn simulate_high_dimensional(cfg: &HighDimConfig) -> Result<HighDimData> {
    if cfg.n_causal == 0 || cfg.n_causal * 2 > cfg.p || cfg.n < 20 {
        return Err(Error::InvalidArgument(
            "need n >= 20 and 0 < 2 * n_causal <= p".into(),
        ));
    }
    if !(0.0..0.95).contains(&cfg.censoring_target) {
        return Err(Error::InvalidArgument(
            "censoring target outside [0, 0.95)".into(),
        ));
    }
    let mut rng = stream(cfg.seed, Stream::HighDimensional, 0);
    let freqs: Vec<f64> = (0..cfg.p)
        .map(|_| 0.05 + 0.45 * rng.random::<f64>())
        .collect();
    let effects: Vec<(usize, f64)> = (0..cfg.n_causal)
        .map(|j| {
            let size = 0.2 + 0.2 * rng.random::<f64>();
            (j, if j % 2 == 0 { size } else { -size })
        })
        .collect();
    let mut ext = Vec::new();
    for &(j, b) in &effects {
        if rng.random::<f64>() < 0.8 {
            ext.push((j, b * (0.6 + 0.8 * rng.random::<f64>())));
        }
    }
    let kept = ext.len();
    for k in 0..kept {
        ext.push((cfg.n_causal + k, 0.05 * (2.0 * rng.random::<f64>() - 1.0)));
    }

    let lp = |z: &Array2<f64>, i: usize| effects.iter().map(|&(j, b)| z[[i, j]] * b).sum::<f64>();
    let draw_t = |theta: f64, rng: &mut dyn rand::RngCore| {
        let e: f64 = Exp1.sample(rng);
        (e * (-theta).exp()).sqrt()
    };

    // calibrate on the causal SNPs only
    let mut cal_rng = stream(cfg.seed, Stream::HighDimensional, 1);
    let causal_freqs = &freqs[..cfg.n_causal];
    let cal = genotypes(50_000, causal_freqs, &mut cal_rng);
    let cal_t: Vec<f64> = (0..cal.nrows())
        .map(|i| draw_t(lp(&cal, i), &mut cal_rng))
        .collect();
    let rate = |u: f64| cal_t.iter().map(|t| (t / u).min(1.0)).sum::<f64>() / cal_t.len() as f64;
    let (mut lo, mut hi) = (0.0, 1.0);
    while rate(hi) > cfg.censoring_target {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) > cfg.censoring_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let upper = 0.5 * (lo + hi);

    let z = genotypes(cfg.n, &freqs, &mut rng);
    let mut times = Vec::with_capacity(cfg.n);
    let mut statuses = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let t = draw_t(lp(&z, i), &mut rng);
        let c = rng.random::<f64>() * upper;
        times.push(t.min(c));
        statuses.push(t <= c);
    }
    let names = (1..=cfg.p).map(|j| format!("snp{j}")).collect();
    let dataset = SurvivalDataset::from_arrays(times, statuses, z)?;
    let dataset = dataset.with_covariates(dataset.covariates().clone(), names)?;
    Ok(HighDimData {
        dataset,
        beta_true: SparseVector::from_entries(cfg.p, effects)?,
        external_weights: SparseVector::from_entries(cfg.p, ext)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighDimReport {
    pub n_train: usize,
    pub n_test: usize,
    pub censoring: f64,
    pub selected_eta: f64,
    pub selected_lambda: f64,
    pub nonzeros: usize,
    pub c_index_coxkl: f64,
    pub c_index_external: f64,
    pub group_sizes: Vec<usize>,
    /// KM curve per risk group, lowest risk first.
    pub curves: Vec<StepFunction>,
    /// Times at which the extreme groups were compared.
    pub comparison_times: Vec<f64>,
    /// Top group survival never above the bottom group, and somewhere below.
    pub top_below_bottom: bool,
}

/// Splits, tunes on the training part, refits and evaluates on the test part.
pub fn run_high_dimensional(cfg: &HighDimConfig) -> Result<HighDimReport> {
    let data = simulate_high_dimensional(cfg)?;
    let ds = &data.dataset;
    let n = ds.n();
    let mut rng = stream(cfg.seed, Stream::HighDimensional, 2);
    let mut idx: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
    let n_train = (cfg.train_fraction * n as f64).round() as usize;
    let (mut train_rows, mut test_rows) = (idx[..n_train].to_vec(), idx[n_train..].to_vec());
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    let train = ds.subset(&train_rows)?;
    let test = ds.subset(&test_rows)?;
    let ext_train = ExternalScores::linear("external", &train, data.external_weights.clone())?;
    let ext_test = ExternalScores::linear("external", &test, data.external_weights.clone())?;
    let exts = [ext_train];

    let points = shared_eta_points(&cfg.eta_grid, 1);
    let base = CoxKlProblem::new(&train, &exts, &[0.0])?;
    let mut lmax: f64 = 0.0;
    for e in &points {
        lmax = lmax.max(lasso::lambda_max(&base.with_etas(e)?));
    }
    let grid = lasso::lambda_grid(lmax, cfg.n_lambda, cfg.lambda_min_ratio)?;
    let fold_seed: u64 = rng.random();
    let report = select_tuning_points(
        &train,
        &exts,
        &points,
        Some(&grid),
        cfg.folds,
        fold_seed,
        &CvOptions::default(),
    )?;
    let lambda = report.selected_lambda.expect("lambda grid supplied");
    let problem = base.with_etas(&report.selected_eta)?;
    let upto: Vec<f64> = grid.iter().copied().filter(|&l| l >= lambda).collect();
    let path = lasso::lasso_path_on(&problem, &upto, &LassoOptions::default())?;
    let beta = path.coefficients.last().expect("nonempty grid").to_dense();

    let scores = test.linear_predictor(&beta);
    let strat = risk_stratify(&scores, &cfg.cutpoints, test.times(), test.statuses())?;
    let bottom = strat.curves.first().expect("at least one group");
    let top = strat.curves.last().expect("at least one group");
    let mut comparison_times: Vec<f64> =
        bottom.times().iter().chain(top.times()).copied().collect();
    comparison_times.sort_by(f64::total_cmp);
    comparison_times.dedup();
    let gaps: Vec<f64> = comparison_times
        .iter()
        .map(|&t| bottom.eval(t) - top.eval(t))
        .collect();
    let top_below_bottom =
        strat.curves.len() > 1 && gaps.iter().all(|&g| g >= 0.0) && gaps.iter().any(|&g| g > 0.0);

    Ok(HighDimReport {
        n_train: train.n(),
        n_test: test.n(),
        censoring: ds.statuses().iter().filter(|&&d| !d).count() as f64 / n as f64,
        selected_eta: report.selected_eta[0],
        selected_lambda: lambda,
        nonzeros: path.coefficients.last().expect("nonempty grid").nonzeros(),
        c_index_coxkl: c_index(test.times(), test.statuses(), &scores)?,
        c_index_external: c_index(test.times(), test.statuses(), &ext_test.scores)?,
        group_sizes: strat.group_sizes.clone(),
        curves: strat.curves,
        comparison_times,
        top_below_bottom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_instance_runs_end_to_end() {
        let cfg = HighDimConfig {
            n: 300,
            p: 200,
            n_causal: 10,
            censoring_target: 0.6,
            eta_grid: vec![0.0, 1.0],
            n_lambda: 5,
            folds: 3,
            ..Default::default()
        };
        let report = run_high_dimensional(&cfg).unwrap();
        assert_eq!(report.n_train + report.n_test, 300);
        assert!((report.censoring - 0.6).abs() < 0.1);
        assert_eq!(report.group_sizes.iter().sum::<usize>(), report.n_test);
    }
}
