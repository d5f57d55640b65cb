#![allow(dead_code)]

use coxkl::{ExternalScores, SurvivalDataset};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// Small Cox-model dataset with roughly 30% censoring and some tied times.
pub fn random_dataset(seed: u64, n: usize, p: usize, ties: bool) -> SurvivalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..p)
        .map(|j| if j % 2 == 0 { 0.6 } else { -0.4 })
        .collect();
    let mut z = Array2::zeros((n, p));
    let mut times = Vec::with_capacity(n);
    let mut statuses = Vec::with_capacity(n);
    for i in 0..n {
        let mut eta = 0.0;
        for j in 0..p {
            let v: f64 = StandardNormal.sample(&mut rng);
            z[[i, j]] = v;
            eta += v * beta[j];
        }
        let e: f64 = Exp1.sample(&mut rng);
        let t = e / eta.exp();
        let c = rng.random::<f64>() * 3.0;
        let mut obs = t.min(c);
        if ties {
            obs = (obs * 4.0).ceil() / 4.0;
        }
        times.push(obs);
        statuses.push(t <= c);
    }
    if !statuses.iter().any(|&s| s) {
        statuses[0] = true;
    }
    SurvivalDataset::from_arrays(times, statuses, z).unwrap()
}

/// External linear score with coefficients perturbed from the truth.
pub fn random_external(ds: &SurvivalDataset, seed: u64) -> ExternalScores {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = (0..ds.n())
        .map(|i| {
            let row = ds.covariate_row(i);
            row.iter()
                .enumerate()
                .map(|(j, v)| v * (if j % 2 == 0 { 0.5 } else { -0.3 } + 0.2 * rng.random::<f64>()))
                .sum()
        })
        .collect();
    ExternalScores::new("ext", scores).unwrap()
}

/// Maximizes a concave univariate function on `[lo, hi]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    let mid = 0.5 * (lo + hi);
    // the L1 kink is a common maximizer; prefer it when not worse
    if lo <= 0.0 && hi >= 0.0 && f(0.0) >= f(mid) {
        0.0
    } else {
        mid
    }
}

/// Breslow log-partial likelihood with events weighted by `mass`, looping
/// over every (event, at-risk) pair.
pub fn naive_weighted_loglik(ds: &SurvivalDataset, mass: &[f64], beta: &[f64]) -> f64 {
    let t = ds.times();
    let lp: Vec<f64> = (0..ds.n())
        .map(|i| {
            ds.covariate_row(i)
                .iter()
                .zip(beta)
                .map(|(z, b)| z * b)
                .sum()
        })
        .collect();
    let mut total = 0.0;
    for i in 0..ds.n() {
        total += mass[i] * lp[i];
    }
    for i in 0..ds.n() {
        if ds.statuses()[i] {
            let s0: f64 = (0..ds.n())
                .filter(|&j| t[j] >= t[i])
                .map(|j| lp[j].exp())
                .sum();
            total -= s0.ln();
        }
    }
    total
}

/// Plain partial likelihood: unit mass on events.
pub fn naive_loglik(ds: &SurvivalDataset, beta: &[f64]) -> f64 {
    let mass: Vec<f64> = ds
        .statuses()
        .iter()
        .map(|&d| if d { 1.0 } else { 0.0 })
        .collect();
    naive_weighted_loglik(ds, &mass, beta)
}

/// `sum over events i of sum_{j at risk} w_j log(w_j / q_j)` with `w` from
/// the external scores and `q` from the internal linear predictor.
pub fn naive_kl(ds: &SurvivalDataset, scores: &[f64], beta: &[f64]) -> f64 {
    let t = ds.times();
    let lp: Vec<f64> = (0..ds.n())
        .map(|i| {
            ds.covariate_row(i)
                .iter()
                .zip(beta)
                .map(|(z, b)| z * b)
                .sum()
        })
        .collect();
    let mut total = 0.0;
    for i in 0..ds.n() {
        if !ds.statuses()[i] {
            continue;
        }
        let risk: Vec<usize> = (0..ds.n()).filter(|&j| t[j] >= t[i]).collect();
        let sw: f64 = risk.iter().map(|&j| scores[j].exp()).sum();
        let sq: f64 = risk.iter().map(|&j| lp[j].exp()).sum();
        for &j in &risk {
            let w = scores[j].exp() / sw;
            let q = lp[j].exp() / sq;
            total += w * (w / q).ln();
        }
    }
    total
}

/// Harrell pair counts `(concordant, discordant, tied_risk, usable)` over all
/// pairs: `i` fails first, or at the same time as a censored `j`.
pub fn naive_concordance(times: &[f64], statuses: &[bool], scores: &[f64]) -> (u64, u64, u64, u64) {
    let (mut c, mut d, mut tie, mut usable) = (0, 0, 0, 0);
    for i in 0..times.len() {
        if !statuses[i] {
            continue;
        }
        for j in 0..times.len() {
            let comparable = times[i] < times[j] || (times[i] == times[j] && !statuses[j]);
            if i == j || !comparable {
                continue;
            }
            usable += 1;
            if scores[i] > scores[j] {
                c += 1;
            } else if scores[i] < scores[j] {
                d += 1;
            } else {
                tie += 1;
            }
        }
    }
    (c, d, tie, usable)
}

/// Product-limit estimate at each distinct event time, by counting.
pub fn naive_km(times: &[f64], statuses: &[bool]) -> Vec<(f64, f64)> {
    let mut event_times: Vec<f64> = times
        .iter()
        .zip(statuses)
        .filter(|(_, &d)| d)
        .map(|(t, _)| *t)
        .collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let mut s = 1.0;
    event_times
        .into_iter()
        .map(|u| {
            let at_risk = times.iter().filter(|&&t| t >= u).count();
            let deaths = times
                .iter()
                .zip(statuses)
                .filter(|(&t, &d)| d && t == u)
                .count();
            s *= 1.0 - deaths as f64 / at_risk as f64;
            (u, s)
        })
        .collect()
}

/// Central-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[j] += h;
            down[j] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian from a gradient.
pub fn fd_jacobian(g: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    (0..x.len())
        .map(|j| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[j] += h;
            down[j] -= h;
            g(&up)
                .iter()
                .zip(g(&down))
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect()
        })
        .collect()
}

/// `|a - b| <= tol * max(1, |a|, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}

/// Cox-LASSO by cyclic golden-section search on
/// `naive_loglik / n - lambda * ||beta||_1`; no library code involved.
pub fn naive_cox_lasso(ds: &SurvivalDataset, lambda: f64) -> Vec<f64> {
    let p = ds.p();
    let n = ds.n() as f64;
    let mut beta = vec![0.0; p];
    for _ in 0..500 {
        let before = beta.clone();
        for j in 0..p {
            let f = |b: f64| {
                let mut trial = beta.clone();
                trial[j] = b;
                naive_loglik(ds, &trial) / n - lambda * trial.iter().map(|v| v.abs()).sum::<f64>()
            };
            beta[j] = golden_max(f, beta[j] - 4.0, beta[j] + 4.0, 1e-11);
        }
        if before.iter().zip(&beta).all(|(a, b)| (a - b).abs() < 1e-10) {
            break;
        }
    }
    beta
}
