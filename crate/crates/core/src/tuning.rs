//! Cross-validated partial likelihood (Verweij and van Houwelingen) and
//! grid search over the integration weight and the LASSO penalty.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cox::{log_partial_likelihood, CoxFitOptions};
use crate::coxkl::{CoxKlProblem, ExternalScores};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::lasso::{self, LassoOptions};

/// Fold labels in `1..=v`.
///
/// Subjects are shuffled with a seeded generator and dealt round-robin.
/// With stratification, events are dealt first and censored subjects
/// continue the rotation, so both event counts and fold sizes differ by at
/// most one.
pub fn make_folds(
    n: usize,
    v: usize,
    seed: u64,
    stratify_on_events: bool,
    statuses: &[bool],
) -> Result<Vec<usize>> {
    if v < 2 || v > n {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= V <= n, got V = {v}, n = {n}"
        )));
    }
    if stratify_on_events && statuses.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} statuses for n = {n}",
            statuses.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    if stratify_on_events {
        let (events, censored): (Vec<usize>, Vec<usize>) =
            order.iter().partition(|&&i| statuses[i]);
        order = events.into_iter().chain(censored).collect();
    }
    let mut labels = vec![0; n];
    for (slot, &i) in order.iter().enumerate() {
        labels[i] = slot % v + 1;
    }
    Ok(labels)
}

fn fold_count(folds: &[usize]) -> usize {
    folds.iter().copied().max().unwrap_or(0)
}

fn training_rows(folds: &[usize], v: usize) -> Vec<usize> {
    (0..folds.len()).filter(|&i| folds[i] != v).collect()
}

fn check_folds(dataset: &SurvivalDataset, folds: &[usize]) -> Result<usize> {
    if folds.len() != dataset.n() {
        return Err(Error::InvalidArgument(format!(
            "{} fold labels for {} subjects",
            folds.len(),
            dataset.n()
        )));
    }
    let v = fold_count(folds);
    if v < 2 || folds.contains(&0) {
        return Err(Error::InvalidArgument(
            "fold labels must be 1..V with V >= 2".into(),
        ));
    }
    Ok(v)
}

/// Criterion value together with the folds whose fits did not converge.
#[derive(Debug, Clone, PartialEq)]
pub struct CvValue {
    pub value: f64,
    pub unconverged_folds: Vec<usize>,
}

/// Fitting controls for cross-validation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub cox: CoxFitOptions,
    pub lasso: LassoOptions,
}

struct Fold {
    label: usize,
    train: SurvivalDataset,
    exts: Vec<ExternalScores>,
}

fn build_folds(
    dataset: &SurvivalDataset,
    exts: &[ExternalScores],
    folds: &[usize],
) -> Result<Vec<Fold>> {
    let v = check_folds(dataset, folds)?;
    for ext in exts {
        ext.check_alignment(dataset)?;
    }
    (1..=v)
        .map(|label| {
            let rows = training_rows(folds, label);
            Ok(Fold {
                label,
                train: dataset.subset(&rows)?,
                exts: exts.iter().map(|e| e.subset(&rows)).collect(),
            })
        })
        .collect()
}

/// Per-fold contributions for each requested lambda (or one unpenalized fit).
fn fold_terms(
    full: &SurvivalDataset,
    fold: &Fold,
    etas: &[f64],
    lambdas: Option<&[f64]>,
    opts: &CvOptions,
) -> Result<Vec<(f64, bool)>> {
    let problem = CoxKlProblem::new(&fold.train, &fold.exts, etas)?;
    let fits: Vec<(Vec<f64>, bool)> = match lambdas {
        None => {
            let fit = problem.fit(&opts.cox)?;
            vec![(fit.beta_hat, fit.converged)]
        }
        Some(grid) => {
            let path = lasso::lasso_path_on(&problem, grid, &opts.lasso)?;
            path.coefficients
                .iter()
                .zip(&path.converged)
                .map(|(c, &ok)| (c.to_dense(), ok))
                .collect()
        }
    };
    fits.into_iter()
        .map(|(beta, ok)| {
            let whole = log_partial_likelihood(full, &beta)?;
            let train = log_partial_likelihood(&fold.train, &beta)?;
            Ok((whole - train, ok))
        })
        .collect()
}

/// Criterion rows over a lambda grid for one weight vector.
fn cvpl_row(
    dataset: &SurvivalDataset,
    folds: &[Fold],
    etas: &[f64],
    lambdas: Option<&[f64]>,
    opts: &CvOptions,
) -> Result<Vec<CvValue>> {
    // the path solver needs a strictly decreasing grid; duplicates share a fit
    let unique: Option<Vec<f64>> = lambdas.map(|g| {
        let mut u = g.to_vec();
        u.sort_by(|a, b| b.total_cmp(a));
        u.dedup();
        u
    });
    let width = unique.as_ref().map_or(1, Vec::len);
    let mut totals = vec![
        CvValue {
            value: 0.0,
            unconverged_folds: Vec::new()
        };
        width
    ];
    for fold in folds {
        let terms = fold_terms(dataset, fold, etas, unique.as_deref(), opts)?;
        for (acc, (term, ok)) in totals.iter_mut().zip(terms) {
            acc.value += term;
            if !ok {
                acc.unconverged_folds.push(fold.label);
            }
        }
    }
    Ok(match (lambdas, unique) {
        (Some(grid), Some(u)) => grid
            .iter()
            .map(|l| totals[u.iter().position(|x| x == l).expect("grid member")].clone())
            .collect(),
        _ => totals,
    })
}

fn check_lambdas(lambdas: Option<&[f64]>) -> Result<()> {
    if let Some(grid) = lambdas {
        if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument(
                "lambda grid must be nonempty and positive".into(),
            ));
        }
    }
    Ok(())
}

/// `sum_v [ l(beta_-v) - l_-v(beta_-v) ]` with the unpenalized internal
/// partial likelihood, `beta_-v` being the CoxKL (or CoxKL-LASSO) fit
/// without fold `v`.
pub fn vvh_cvpl(
    dataset: &SurvivalDataset,
    exts: &[ExternalScores],
    etas: &[f64],
    lambda: Option<f64>,
    folds: &[usize],
    opts: &CvOptions,
) -> Result<CvValue> {
    check_lambdas(lambda.as_ref().map(std::slice::from_ref))?;
    let built = build_folds(dataset, exts, folds)?;
    let grid = lambda.map(|l| vec![l]);
    let mut row = cvpl_row(dataset, &built, etas, grid.as_deref(), opts)?;
    Ok(row.remove(0))
}

/// Outcome of a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// Weight vectors, one entry per external model.
    pub eta_grid: Vec<Vec<f64>>,
    pub lambda_grid: Option<Vec<f64>>,
    /// Criterion values, one row per weight vector and one column per lambda.
    pub cvpl: Vec<Vec<f64>>,
    pub selected_eta: Vec<f64>,
    pub selected_lambda: Option<f64>,
    pub fold_assignment: Vec<usize>,
    pub fold_sizes: Vec<usize>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Default weights: `0` followed by 15 log-spaced values on `[0.01, 100]`.
pub fn default_eta_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..15).map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / 14.0)))
        .collect()
}

/// Common weight for every external model at each grid value.
pub fn shared_eta_points(grid: &[f64], n_external: usize) -> Vec<Vec<f64>> {
    grid.iter().map(|&e| vec![e; n_external]).collect()
}

/// Cartesian product of a per-model grid.
pub fn product_eta_points(grid: &[f64], n_external: usize) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for _ in 0..n_external {
        points = points
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                grid.iter().map(move |&e| {
                    let mut q = p.clone();
                    q.push(e);
                    q
                })
            })
            .collect();
    }
    points
}

/// Lambda grid shared by every weight: default path length and ratio, from
/// the largest full-data `lambda_max` over the weight grid.
pub fn default_lambda_grid(
    dataset: &SurvivalDataset,
    exts: &[ExternalScores],
    eta_points: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let base = CoxKlProblem::new(dataset, exts, &vec![0.0; exts.len()])?;
    let mut lmax: f64 = 0.0;
    for etas in eta_points {
        lmax = lmax.max(lasso::lambda_max(&base.with_etas(etas)?));
    }
    let ratio = lasso::default_lambda_min_ratio(dataset.n(), dataset.p());
    lasso::lambda_grid(lmax, 100, ratio)
}

fn lexicographic_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// Evaluates the criterion on the full grid and selects its maximizer.
///
/// Ties prefer the smaller weight (lexicographically for several external
/// models), then the larger lambda.
pub fn select_tuning_points(
    dataset: &SurvivalDataset,
    exts: &[ExternalScores],
    eta_points: &[Vec<f64>],
    lambda_grid: Option<&[f64]>,
    v: usize,
    seed: u64,
    opts: &CvOptions,
) -> Result<CvReport> {
    if eta_points.is_empty() {
        return Err(Error::InvalidArgument("eta grid is empty".into()));
    }
    check_lambdas(lambda_grid)?;
    let folds = make_folds(dataset.n(), v, seed, true, dataset.statuses())?;
    let built = build_folds(dataset, exts, &folds)?;
    let rows: Vec<Vec<CvValue>> = eta_points
        .par_iter()
        .map(|etas| cvpl_row(dataset, &built, etas, lambda_grid, opts))
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    let mut best: Option<(usize, usize)> = None;
    for (i, row) in rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if !cell.unconverged_folds.is_empty() {
                warnings.push(format!(
                    "eta {:?}{}: folds {:?} did not converge; last iterates used",
                    eta_points[i],
                    lambda_grid.map_or(String::new(), |g| format!(", lambda {}", g[j])),
                    cell.unconverged_folds
                ));
            }
            if !cell.value.is_finite() {
                continue;
            }
            let better = match best {
                None => true,
                Some((bi, bj)) => {
                    let bv = rows[bi][bj].value;
                    cell.value > bv
                        || (cell.value == bv
                            && (lexicographic_less(&eta_points[i], &eta_points[bi])
                                || (eta_points[i] == eta_points[bi]
                                    && lambda_grid.is_some_and(|g| g[j] > g[bj]))))
                }
            };
            if better {
                best = Some((i, j));
            }
        }
    }
    for w in &warnings {
        warn!("{w}");
    }
    let (bi, bj) = best.ok_or_else(|| {
        Error::Numerical("cross-validated criterion is not finite anywhere".into())
    })?;
    let mut fold_sizes = vec![0; fold_count(&folds)];
    for &f in &folds {
        fold_sizes[f - 1] += 1;
    }
    Ok(CvReport {
        eta_grid: eta_points.to_vec(),
        lambda_grid: lambda_grid.map(<[f64]>::to_vec),
        cvpl: rows
            .into_iter()
            .map(|r| r.into_iter().map(|c| c.value).collect())
            .collect(),
        selected_eta: eta_points[bi].clone(),
        selected_lambda: lambda_grid.map(|g| g[bj]),
        fold_assignment: folds,
        fold_sizes,
        seed,
        warnings,
    })
}

/// Grid search with one shared weight for all external models.
pub fn select_tuning(
    dataset: &SurvivalDataset,
    exts: &[ExternalScores],
    eta_grid: &[f64],
    lambda_grid: Option<&[f64]>,
    v: usize,
    seed: u64,
) -> Result<CvReport> {
    select_tuning_points(
        dataset,
        exts,
        &shared_eta_points(eta_grid, exts.len()),
        lambda_grid,
        v,
        seed,
        &CvOptions::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn folds_have_balanced_sizes() {
        let f = make_folds(10, 5, 1, false, &[]).unwrap();
        for v in 1..=5 {
            assert_eq!(f.iter().filter(|&&x| x == v).count(), 2);
        }
        assert!(make_folds(3, 4, 1, false, &[]).is_err());
        assert!(make_folds(3, 1, 1, false, &[]).is_err());
    }

    #[test]
    fn stratified_folds_balance_events() {
        let statuses: Vec<bool> = (0..12).map(|i| i % 2 == 0).collect();
        let f = make_folds(12, 3, 9, true, &statuses).unwrap();
        for v in 1..=3 {
            let events = (0..12).filter(|&i| f[i] == v && statuses[i]).count();
            assert_eq!(events, 2);
        }
        assert_eq!(f, make_folds(12, 3, 9, true, &statuses).unwrap());
    }

    #[test]
    fn two_subject_leave_one_out() {
        let ds =
            SurvivalDataset::from_arrays(vec![1.0, 2.0], vec![true, true], array![[1.0], [0.0]])
                .unwrap();
        let cv = vvh_cvpl(&ds, &[], &[], None, &[1, 2], &CvOptions::default()).unwrap();
        assert!((cv.value + 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn default_eta_grid_spans_hundredth_to_hundred() {
        let g = default_eta_grid();
        assert_eq!(g.len(), 16);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.01).abs() < 1e-15 && (g[15] - 100.0).abs() < 1e-10);
    }

    #[test]
    fn product_points_enumerate_all_pairs() {
        let pts = product_eta_points(&[0.0, 1.0], 2);
        assert_eq!(
            pts,
            vec![
                vec![0.0, 0.0],
                vec![0.0, 1.0],
                vec![1.0, 0.0],
                vec![1.0, 1.0]
            ]
        );
    }
}
