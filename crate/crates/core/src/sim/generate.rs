use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use super::rng::{stream, Stream};
use super::scenario::Setting;
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};

/// Simulated covariates. `hidden` holds `(Zu1, Zu2)` in Setting II and has
/// no columns in Setting I; it drives outcomes but never enters a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub observed: Array2<f64>,
    pub hidden: Array2<f64>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

/// `Z1, Z2` AR(1) normals with correlation 0.5; `Z3, Z4` Bernoulli(0.5);
/// `Z5 ~ N(2 Zl, 1)` and (Setting I) `Z6 ~ N(-2 Zl, 1)` with latent
/// `Zl ~ Bernoulli(p_l)`. Setting II adds hidden `Zu1 ~ Bernoulli(0.5)` and
/// `Zu2 ~ N(0, 1)`.
pub fn generate_covariates<R: Rng + ?Sized>(
    n: usize,
    p_l: f64,
    setting: Setting,
    rng: &mut R,
) -> Covariates {
    let p = setting.observed_covariates();
    let hidden_cols = if setting == Setting::II { 2 } else { 0 };
    let mut observed = Array2::zeros((n, p));
    let mut hidden = Array2::zeros((n, hidden_cols));
    let rho: f64 = 0.5;
    for i in 0..n {
        let z1 = normal(rng);
        let z2 = rho * z1 + (1.0 - rho * rho).sqrt() * normal(rng);
        let z3 = bernoulli(rng, 0.5);
        let z4 = bernoulli(rng, 0.5);
        let latent = bernoulli(rng, p_l);
        let z5 = 2.0 * latent + normal(rng);
        observed[[i, 0]] = z1;
        observed[[i, 1]] = z2;
        observed[[i, 2]] = z3;
        observed[[i, 3]] = z4;
        observed[[i, 4]] = z5;
        match setting {
            Setting::I => observed[[i, 5]] = -2.0 * latent + normal(rng),
            Setting::II => {
                hidden[[i, 0]] = bernoulli(rng, 0.5);
                hidden[[i, 1]] = normal(rng);
            }
        }
    }
    Covariates { observed, hidden }
}

/// `Z' beta` under the generating model of the setting.
pub fn true_linear_predictor(setting: Setting, cov: &Covariates, beta: &[f64]) -> Vec<f64> {
    let z = &cov.observed;
    (0..z.nrows())
        .map(|i| match setting {
            Setting::I => (0..6).map(|j| z[[i, j]] * beta[j]).sum(),
            Setting::II => {
                (0..5).map(|j| z[[i, j]] * beta[j]).sum::<f64>()
                    + beta[5] * z[[i, 0]] * z[[i, 4]]
                    + beta[6] * cov.hidden[[i, 0]]
                    + beta[7] * cov.hidden[[i, 1]]
            }
        })
        .collect()
}

/// Event times from the hazard `2t exp(theta)`, i.e. `T = sqrt(E / exp(theta))`
/// with `E ~ Exp(1)`, and censoring `C ~ Uniform(0, upper)` (none when
/// `censor_upper` is `None`).
pub fn generate_outcomes<R: Rng + ?Sized>(
    linear_predictor: &[f64],
    censor_upper: Option<f64>,
    rng: &mut R,
) -> (Vec<f64>, Vec<bool>) {
    let mut times = Vec::with_capacity(linear_predictor.len());
    let mut statuses = Vec::with_capacity(linear_predictor.len());
    for &theta in linear_predictor {
        let e: f64 = Exp1.sample(rng);
        let t = (e * (-theta).exp()).sqrt();
        match censor_upper {
            Some(u) => {
                let c = rng.random::<f64>() * u;
                times.push(t.min(c));
                statuses.push(t <= c);
            }
            None => {
                times.push(t);
                statuses.push(true);
            }
        }
    }
    (times, statuses)
}

/// One simulated cohort and its covariates.
pub fn simulate_cohort<R: Rng + ?Sized>(
    setting: Setting,
    n: usize,
    p_l: f64,
    beta: &[f64],
    censor_upper: Option<f64>,
    rng: &mut R,
) -> Result<(SurvivalDataset, Covariates)> {
    let cov = generate_covariates(n, p_l, setting, rng);
    let lp = true_linear_predictor(setting, &cov, beta);
    let (times, statuses) = generate_outcomes(&lp, censor_upper, rng);
    let ds = SurvivalDataset::from_arrays(times, statuses, cov.observed.clone())?;
    if ds.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    Ok((ds, cov))
}

/// Monte Carlo size for censoring calibration.
pub const CALIBRATION_SAMPLE: usize = 200_000;

/// Censoring bound whose expected censoring proportion equals `target_rate`.
///
/// Event times are drawn once; for a bound `u` the censoring rate is
/// estimated by `mean(min(T / u, 1))`, the conditional probability
/// `P(C < T | T)`, which is smooth and decreasing in `u`. Bisection then
/// runs to well below `tolerance`. A zero target returns `None`.
pub fn calibrate_censoring(
    setting: Setting,
    p_l: f64,
    beta: &[f64],
    target_rate: f64,
    tolerance: f64,
    seed: u64,
) -> Result<Option<f64>> {
    if !(0.0..=0.95).contains(&target_rate) {
        return Err(Error::InvalidArgument(format!(
            "censoring target {target_rate} outside [0, 0.95]"
        )));
    }
    if !(tolerance > 0.0) {
        return Err(Error::InvalidArgument(
            "calibration tolerance must be positive".into(),
        ));
    }
    if target_rate == 0.0 {
        return Ok(None);
    }
    let mut rng = stream(seed, Stream::Calibration, (p_l * 1e6).round() as u64);
    let cov = generate_covariates(CALIBRATION_SAMPLE, p_l, setting, &mut rng);
    let lp = true_linear_predictor(setting, &cov, beta);
    let times: Vec<f64> = lp
        .iter()
        .map(|&theta| {
            let e: f64 = Exp1.sample(&mut rng);
            (e * (-theta).exp()).sqrt()
        })
        .collect();
    let rate = |u: f64| times.iter().map(|t| (t / u).min(1.0)).sum::<f64>() / times.len() as f64;
    let mut hi = 1.0;
    while rate(hi) > target_rate {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Numerical(format!(
                "censoring target {target_rate} unreachable"
            )));
        }
    }
    let mut lo = 0.0;
    let mut mid = hi;
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let r = rate(mid);
        if (r - target_rate).abs() <= tolerance * 1e-3 {
            break;
        }
        if r > target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (rate(mid) - target_rate).abs() > tolerance {
        return Err(Error::Numerical(format!(
            "censoring calibration did not reach {target_rate}"
        )));
    }
    Ok(Some(mid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_shift_moves_z5_and_z6() {
        let mut rng = stream(1, Stream::Train, 0);
        let n = 4000;
        let cov = generate_covariates(n, 1.0, Setting::I, &mut rng);
        let tol = 4.0 / (n as f64).sqrt();
        assert!((cov.observed.column(4).mean().unwrap() - 2.0).abs() < tol);
        assert!((cov.observed.column(5).mean().unwrap() + 2.0).abs() < tol);
        let cov = generate_covariates(n, 0.0, Setting::I, &mut rng);
        assert!(cov.observed.column(4).mean().unwrap().abs() < tol);
        let z1 = cov.observed.column(0);
        let z2 = cov.observed.column(1);
        let (m1, m2) = (z1.mean().unwrap(), z2.mean().unwrap());
        let cov12 = z1
            .iter()
            .zip(z2)
            .map(|(a, b)| (a - m1) * (b - m2))
            .sum::<f64>();
        let v1 = z1.iter().map(|a| (a - m1).powi(2)).sum::<f64>();
        let v2 = z2.iter().map(|b| (b - m2).powi(2)).sum::<f64>();
        assert!((cov12 / (v1 * v2).sqrt() - 0.5).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn setting_two_shapes() {
        let mut rng = stream(1, Stream::Train, 0);
        let cov = generate_covariates(10, 1.0, Setting::II, &mut rng);
        assert_eq!(cov.observed.ncols(), 5);
        assert_eq!(cov.hidden.ncols(), 2);
        assert!(cov.hidden.column(0).iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn no_censoring_and_huge_bound() {
        let mut rng = stream(2, Stream::Train, 0);
        let (_, s) = generate_outcomes(&[0.0; 100], None, &mut rng);
        assert!(s.iter().all(|&d| d));
        let (_, s) = generate_outcomes(&[0.0; 2000], Some(1e9), &mut rng);
        assert!(s.iter().filter(|&&d| !d).count() <= 1);
    }

    #[test]
    fn zero_target_means_no_censoring() {
        let beta = Setting::I.default_beta();
        assert_eq!(
            calibrate_censoring(Setting::I, 1.0, &beta, 0.0, 0.005, 1).unwrap(),
            None
        );
        assert!(calibrate_censoring(Setting::I, 1.0, &beta, 0.99, 0.005, 1).is_err());
    }
}
