//! CoxKL-LASSO: maximize `l_eta(beta) / n - lambda * ||beta||_1`.
//!
//! Each outer iteration builds the exact second-order model of `l_eta / n`
//! at the current iterate and maximizes model-minus-penalty by cyclic
//! coordinate descent with soft-thresholding, followed by a backtracking
//! step on the true penalized objective. The information matrix is never
//! formed: its action on a coordinate direction is `Z' M Z_j / n`, and
//! `M Z_j` costs `O(n)` through the risk-set kernel, so a coordinate visit
//! is `O(n)` regardless of `p`.
//!
//! Coordinates are restricted to an active set; after each restricted
//! solve the full score is checked and KKT violators are added. Along a
//! path the sequential strong rule seeds the active set.
//!
//! The penalty applies to coefficients on the original covariate scale, so
//! the KKT certificate reads `|U_j| <= lambda` at zeros and
//! `U_j = lambda * sign(beta_j)` elsewhere, with `U` the per-subject score.

use log::warn;
use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::coxkl::CoxKlProblem;
use crate::error::{Error, Result};
use crate::kernel::RiskSetKernel;
use crate::sparse::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    pub max_outer_iterations: usize,
    pub max_inner_sweeps: usize,
    /// Largest coefficient change that ends a coordinate-descent pass.
    pub inner_tolerance: f64,
    /// Target KKT residual for the returned solution.
    pub kkt_tolerance: f64,
    pub step_halving_max: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            max_outer_iterations: 200,
            max_inner_sweeps: 10_000,
            inner_tolerance: 1e-8,
            kkt_tolerance: 1e-9,
            step_halving_max: 30,
        }
    }
}

/// Solution at a single `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub lambda: f64,
    pub coefficients: SparseVector,
    pub converged: bool,
    pub outer_iterations: usize,
    /// `l_eta(beta) / n - lambda * ||beta||_1`.
    pub objective: f64,
    /// Penalized objective after each accepted outer step.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
    /// Largest KKT residual over all coordinates.
    pub kkt_residual: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Solutions along a decreasing `lambda` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationPath {
    pub lambdas: Vec<f64>,
    pub nonzero_counts: Vec<usize>,
    pub coefficients: Vec<SparseVector>,
    pub objective_values: Vec<f64>,
    pub converged: Vec<bool>,
}

/// Per-subject score `U_eta(beta)` for every coordinate.
pub fn full_score(problem: &CoxKlProblem, beta: &[f64]) -> Vec<f64> {
    let ds = problem.dataset();
    let theta = ds.linear_predictor(beta);
    let kernel = RiskSetKernel::new(ds, &theta);
    score_from_kernel(problem, &kernel)
}

fn score_from_kernel(problem: &CoxKlProblem, kernel: &RiskSetKernel) -> Vec<f64> {
    let ds = problem.dataset();
    let n = ds.n() as f64;
    let g = Array1::from(kernel.theta_gradient(problem.event_mass()));
    ds.covariates().t().dot(&g).iter().map(|v| v / n).collect()
}

fn l1(beta: &[f64]) -> f64 {
    beta.iter().map(|b| b.abs()).sum()
}

/// `l_eta(beta) / n - lambda * ||beta||_1`.
pub fn penalized_objective(problem: &CoxKlProblem, beta: &[f64], lambda: f64) -> Result<f64> {
    let n = problem.dataset().n() as f64;
    Ok(problem.objective(beta)? / n - lambda * l1(beta))
}

/// Smallest `lambda` whose solution is identically zero: `||U_eta(0)||_inf`.
pub fn lambda_max(problem: &CoxKlProblem) -> f64 {
    let p = problem.dataset().p();
    full_score(problem, &vec![0.0; p])
        .iter()
        .fold(0.0, |m, g| m.max(g.abs()))
}

/// Largest violation of the KKT conditions at `beta`.
pub fn kkt_residual(score: &[f64], beta: &[f64], lambda: f64) -> f64 {
    score
        .iter()
        .zip(beta)
        .map(|(&g, &b)| {
            if b == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g - lambda * b.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

struct Solver<'p, 'd> {
    problem: &'p CoxKlProblem<'d>,
    opts: LassoOptions,
    lambda: f64,
    pinned: Vec<bool>,
    columns: Vec<Option<Vec<f64>>>,
    n: f64,
}

impl<'p, 'd> Solver<'p, 'd> {
    fn column(&mut self, j: usize) -> &[f64] {
        let ds = self.problem.dataset();
        self.columns[j].get_or_insert_with(|| ds.covariates().column(j).to_vec())
    }

    fn objective(&self, beta: &[f64]) -> f64 {
        let ds = self.problem.dataset();
        let theta = ds.linear_predictor(beta);
        RiskSetKernel::new(ds, &theta).log_likelihood(self.problem.event_mass()) / self.n
            - self.lambda * l1(beta)
    }

    /// One coordinate-descent pass over `subset` (positions in `active`);
    /// returns the largest coefficient change.
    #[allow(clippy::too_many_arguments)]
    fn sweep(
        &self,
        active: &[usize],
        subset: &[usize],
        beta: &[f64],
        grad: &[f64],
        h_diag: &[f64],
        h_cols: &[Vec<f64>],
        delta: &mut [f64],
        hd: &mut [f64],
    ) -> f64 {
        let mut max_change: f64 = 0.0;
        for &a in subset {
            let j = active[a];
            let hjj = h_diag[a];
            if self.pinned[j] || !(hjj > 1e-300) {
                continue;
            }
            let col = self.columns[j].as_deref().expect("column cached");
            let cross = col.iter().zip(hd.iter()).map(|(z, v)| z * v).sum::<f64>();
            let u = grad[a] - cross + hjj * delta[a];
            let updated = soft_threshold(u + hjj * beta[j], self.lambda) / hjj;
            let change = updated - (beta[j] + delta[a]);
            if change != 0.0 {
                delta[a] += change;
                for (acc, m) in hd.iter_mut().zip(&h_cols[a]) {
                    *acc += change * m;
                }
                max_change = max_change.max(change.abs());
            }
        }
        max_change
    }

    /// Proximal Newton restricted to `active`. Returns whether the restricted
    /// KKT residual reached tolerance.
    fn solve_active(
        &mut self,
        beta: &mut [f64],
        active: &[usize],
        iterations: &mut usize,
        trace: &mut Vec<f64>,
    ) -> bool {
        let ds = self.problem.dataset();
        let n_obs = ds.n();
        let mut current = self.objective(beta);
        loop {
            let theta = ds.linear_predictor(beta);
            let kernel = RiskSetKernel::new(ds, &theta);
            let g_theta = kernel.theta_gradient(self.problem.event_mass());
            let mut grad = Vec::with_capacity(active.len());
            let mut h_cols = Vec::with_capacity(active.len());
            let mut h_diag = Vec::with_capacity(active.len());
            for &j in active {
                let col = self.column(j).to_vec();
                let gj = col.iter().zip(&g_theta).map(|(z, g)| z * g).sum::<f64>() / self.n;
                let mz: Vec<f64> = kernel
                    .hessian_apply(&col)
                    .into_iter()
                    .map(|v| v / self.n)
                    .collect();
                let hjj = col.iter().zip(&mz).map(|(z, m)| z * m).sum::<f64>();
                grad.push(gj);
                h_diag.push(hjj);
                h_cols.push(mz);
            }
            let restricted_beta: Vec<f64> = active.iter().map(|&j| beta[j]).collect();
            let residual = active
                .iter()
                .enumerate()
                .filter(|(_, &j)| !self.pinned[j])
                .map(|(a, _)| kkt_residual(&grad[a..=a], &restricted_beta[a..=a], self.lambda))
                .fold(0.0, f64::max);
            if residual <= self.opts.kkt_tolerance {
                return true;
            }
            if *iterations >= self.opts.max_outer_iterations {
                return false;
            }

            // coordinate descent on the quadratic model: full sweeps alternate
            // with sweeps over the current nonzeros until those settle
            let mut delta = vec![0.0; active.len()];
            let mut hd = vec![0.0; n_obs];
            let all: Vec<usize> = (0..active.len()).collect();
            let mut sweeps = 0;
            while sweeps < self.opts.max_inner_sweeps {
                sweeps += 1;
                if self.sweep(
                    active, &all, beta, &grad, &h_diag, &h_cols, &mut delta, &mut hd,
                ) < self.opts.inner_tolerance
                {
                    break;
                }
                let support: Vec<usize> = all
                    .iter()
                    .copied()
                    .filter(|&a| beta[active[a]] + delta[a] != 0.0)
                    .collect();
                while sweeps < self.opts.max_inner_sweeps {
                    sweeps += 1;
                    if self.sweep(
                        active, &support, beta, &grad, &h_diag, &h_cols, &mut delta, &mut hd,
                    ) < self.opts.inner_tolerance
                    {
                        break;
                    }
                }
            }

            let mut t = 1.0;
            let slack = 4.0 * f64::EPSILON * (current.abs() + 1.0);
            let mut accepted = false;
            for _ in 0..=self.opts.step_halving_max {
                let mut trial = beta.to_vec();
                for (a, &j) in active.iter().enumerate() {
                    trial[j] += t * delta[a];
                    // land exactly on zero when the full step does
                    if t == 1.0 && (beta[j] + delta[a]) == 0.0 {
                        trial[j] = 0.0;
                    }
                }
                let value = self.objective(&trial);
                if value.is_finite() && value >= current - slack {
                    beta.copy_from_slice(&trial);
                    current = value;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            *iterations += 1;
            trace.push(current);
            if !accepted {
                return false;
            }
        }
    }

    fn solve(&mut self, beta: &mut [f64], mut active: Vec<usize>) -> (bool, usize, Vec<f64>, f64) {
        let mut iterations = 0;
        let mut trace = Vec::new();
        loop {
            active.retain(|&j| !self.pinned[j]);
            active.sort_unstable();
            active.dedup();
            let restricted_ok = self.solve_active(beta, &active, &mut iterations, &mut trace);
            let score = full_score(self.problem, beta);
            let mut in_active = vec![false; beta.len()];
            for &j in &active {
                in_active[j] = true;
            }
            let violators: Vec<usize> = (0..beta.len())
                .filter(|&j| {
                    !in_active[j]
                        && !self.pinned[j]
                        && score[j].abs() > self.lambda + self.opts.kkt_tolerance
                })
                .collect();
            let residual = kkt_residual(
                &score
                    .iter()
                    .enumerate()
                    .map(|(j, &g)| if self.pinned[j] { 0.0 } else { g })
                    .collect::<Vec<_>>(),
                beta,
                self.lambda,
            );
            if violators.is_empty() || iterations >= self.opts.max_outer_iterations {
                return (
                    restricted_ok && violators.is_empty(),
                    iterations,
                    trace,
                    residual,
                );
            }
            active.extend(violators);
        }
    }
}

fn validate(problem: &CoxKlProblem, lambda: f64, opts: &LassoOptions) -> Result<()> {
    if problem.dataset().p() == 0 {
        return Err(Error::InvalidArgument(
            "LASSO needs at least one covariate".into(),
        ));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if opts.max_outer_iterations == 0
        || !(opts.kkt_tolerance > 0.0)
        || !(opts.inner_tolerance > 0.0)
    {
        return Err(Error::InvalidArgument(format!(
            "invalid LASSO options {opts:?}"
        )));
    }
    Ok(())
}

fn fit_with_screen(
    problem: &CoxKlProblem,
    lambda: f64,
    start: Vec<f64>,
    screen: Vec<usize>,
    lmax: f64,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    validate(problem, lambda, opts)?;
    let ds = problem.dataset();
    let p = ds.p();
    if start.len() != p {
        return Err(Error::InvalidArgument(format!(
            "warm start has length {}, expected {p}",
            start.len()
        )));
    }
    let pinned = ds.constant_columns();
    let mut warnings = Vec::new();
    if pinned.iter().any(|&c| c) {
        let cols: Vec<usize> = (0..p).filter(|&j| pinned[j]).collect();
        warn!("constant covariates {cols:?} pinned at zero");
        warnings.push(format!("constant covariates pinned at zero: {cols:?}"));
    }
    let n = ds.n() as f64;
    if lambda >= lmax {
        let zero = vec![0.0; p];
        let objective = problem.objective(&zero)? / n;
        return Ok(LassoFit {
            lambda,
            coefficients: SparseVector::zeros(p),
            converged: true,
            outer_iterations: 0,
            objective,
            objective_trace: vec![objective],
            kkt_residual: 0.0,
            warnings,
        });
    }
    let mut beta: Vec<f64> = start
        .iter()
        .enumerate()
        .map(|(j, &b)| if pinned[j] { 0.0 } else { b })
        .collect();
    let mut active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
    active.extend(screen);
    let mut solver = Solver {
        problem,
        opts: *opts,
        lambda,
        pinned,
        columns: vec![None; p],
        n,
    };
    let (converged, outer_iterations, objective_trace, kkt) = solver.solve(&mut beta, active);
    if !converged {
        warnings.push(format!("LASSO did not converge at lambda = {lambda}"));
    }
    let objective = solver.objective(&beta);
    Ok(LassoFit {
        lambda,
        coefficients: SparseVector::from_dense(&beta),
        converged,
        outer_iterations,
        objective,
        objective_trace,
        kkt_residual: kkt,
        warnings,
    })
}

/// Solution at one `lambda`, optionally warm-started.
pub fn fit_coxkl_lasso(
    problem: &CoxKlProblem,
    lambda: f64,
    warm_start: Option<&[f64]>,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    let p = problem.dataset().p();
    let start = warm_start.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
    let score = full_score(problem, &start);
    let screen = (0..p).filter(|&j| score[j].abs() > lambda).collect();
    fit_with_screen(problem, lambda, start, screen, lambda_max(problem), opts)
}

/// Default smallest-to-largest lambda ratio: `0.05` when `n < p`, else `1e-4`.
pub fn default_lambda_min_ratio(n: usize, p: usize) -> f64 {
    if n < p {
        0.05
    } else {
        1e-4
    }
}

/// `n_lambda` log-spaced values from `lambda_max` down to `ratio * lambda_max`.
pub fn lambda_grid(lambda_max: f64, n_lambda: usize, lambda_min_ratio: f64) -> Result<Vec<f64>> {
    if n_lambda < 2 {
        return Err(Error::InvalidArgument("n_lambda must be at least 2".into()));
    }
    if !(lambda_min_ratio > 0.0 && lambda_min_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda_min_ratio must lie in (0, 1), got {lambda_min_ratio}"
        )));
    }
    if !(lambda_max > 0.0) {
        return Err(Error::InvalidArgument(
            "lambda_max is zero: every covariate is uninformative".into(),
        ));
    }
    let (hi, lo) = (lambda_max.ln(), (lambda_max * lambda_min_ratio).ln());
    Ok((0..n_lambda)
        .map(|l| {
            if l == 0 {
                lambda_max
            } else {
                (hi + (lo - hi) * l as f64 / (n_lambda - 1) as f64).exp()
            }
        })
        .collect())
}

/// Warm-started path over an explicit strictly decreasing grid.
pub fn lasso_path_on(
    problem: &CoxKlProblem,
    lambdas: &[f64],
    opts: &LassoOptions,
) -> Result<RegularizationPath> {
    if lambdas.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::InvalidArgument(
            "lambda grid must be strictly decreasing".into(),
        ));
    }
    let p = problem.dataset().p();
    let lmax = lambda_max(problem);
    let mut beta = vec![0.0; p];
    let mut prev_lambda = lmax.max(lambdas.first().copied().unwrap_or(lmax));
    let mut path = RegularizationPath {
        lambdas: lambdas.to_vec(),
        nonzero_counts: Vec::with_capacity(lambdas.len()),
        coefficients: Vec::with_capacity(lambdas.len()),
        objective_values: Vec::with_capacity(lambdas.len()),
        converged: Vec::with_capacity(lambdas.len()),
    };
    for &lambda in lambdas {
        let score = full_score(problem, &beta);
        // sequential strong rule
        let cutoff = 2.0 * lambda - prev_lambda;
        let screen = (0..p).filter(|&j| score[j].abs() >= cutoff).collect();
        let fit = fit_with_screen(problem, lambda, beta.clone(), screen, lmax, opts)?;
        beta = fit.coefficients.to_dense();
        path.nonzero_counts.push(fit.coefficients.nonzeros());
        path.objective_values.push(fit.objective);
        path.converged.push(fit.converged);
        path.coefficients.push(fit.coefficients);
        prev_lambda = lambda;
    }
    Ok(path)
}

/// Path from `lambda_max` down to `lambda_min_ratio * lambda_max`.
pub fn lasso_path(
    problem: &CoxKlProblem,
    n_lambda: usize,
    lambda_min_ratio: f64,
    opts: &LassoOptions,
) -> Result<RegularizationPath> {
    if problem.dataset().p() == 0 {
        return Err(Error::InvalidArgument(
            "LASSO needs at least one covariate".into(),
        ));
    }
    let grid = lambda_grid(lambda_max(problem), n_lambda, lambda_min_ratio)?;
    lasso_path_on(problem, &grid, opts)
}

/// Dense view of a path solution, used by callers that score subjects.
pub fn linear_predictor(x: ArrayView1<f64>, coefficients: &SparseVector) -> f64 {
    coefficients.entries.iter().map(|&(j, b)| x[j] * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SurvivalDataset;
    use ndarray::array;

    #[test]
    fn lambda_max_hand_value() {
        let ds =
            SurvivalDataset::from_arrays(vec![1.0, 2.0], vec![true, true], array![[1.0], [0.0]])
                .unwrap();
        let problem = CoxKlProblem::internal(&ds);
        assert!((lambda_max(&problem) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn constant_covariates_have_zero_lambda_max() {
        let ds = SurvivalDataset::from_arrays(
            vec![1.0, 2.0, 3.0],
            vec![true, false, true],
            array![[1.0, 4.0], [1.0, 4.0], [1.0, 4.0]],
        )
        .unwrap();
        assert!(lambda_max(&CoxKlProblem::internal(&ds)).abs() < 1e-14);
    }

    #[test]
    fn grid_is_log_spaced_and_validated() {
        let g = lambda_grid(2.0, 3, 0.01).unwrap();
        assert_eq!(g[0], 2.0);
        assert!((g[1] - 0.2).abs() < 1e-12 && (g[2] - 0.02).abs() < 1e-12);
        assert!(lambda_grid(2.0, 1, 0.01).is_err());
        assert!(lambda_grid(2.0, 5, 1.5).is_err());
    }

    #[test]
    fn zero_covariates_is_an_error() {
        let ds =
            SurvivalDataset::from_arrays(vec![1.0], vec![true], ndarray::Array2::zeros((1, 0)))
                .unwrap();
        let problem = CoxKlProblem::internal(&ds);
        assert!(fit_coxkl_lasso(&problem, 0.1, None, &LassoOptions::default()).is_err());
    }
}
