//! Risk-set sums in linear-predictor space.
//!
//! For a linear predictor `theta` and per-subject event masses `a`, the
//! (generalized) log-partial likelihood is
//!
//! ```text
//! l(theta) = sum_i a_i theta_i - sum_k d_k log S0_k,   S0_k = sum_{i in R_k} exp(theta_i)
//! ```
//!
//! Its gradient is `a - Lambda` where `Lambda_i` is the Breslow compensator
//! of subject `i`, and its negative Hessian `M` acts on a vector `v` as
//! `(M v)_i = sum_{k: i in R_k} d_k pi_ki (v_i - mean_k(v))`. Both reduce to
//! one backward sweep over the time-sorted subjects plus a forward
//! recurrence over event times, so every product costs `O(n)`.
//!
//! Sums over risk sets are accumulated with a running maximum shift: the
//! accumulators are rescaled whenever a larger `theta` enters the suffix,
//! so each `S0_k` is effectively computed relative to its own risk-set max.

use crate::data::SurvivalDataset;

pub(crate) struct RiskSetKernel<'a> {
    ds: &'a SurvivalDataset,
    theta: Vec<f64>,
    log_s0: Vec<f64>,
    /// `P_k = S0_k * sum_{k' <= k} d_k' / S0_k'`.
    carried: Vec<f64>,
}

impl<'a> RiskSetKernel<'a> {
    pub(crate) fn new(ds: &'a SurvivalDataset, theta: &[f64]) -> Self {
        debug_assert_eq!(theta.len(), ds.n());
        let k_count = ds.event_times().len();
        let order = ds.order();
        let starts = ds.risk_starts();
        let mut log_s0 = vec![0.0; k_count];
        let mut shift = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut pos = order.len();
        for k in (0..k_count).rev() {
            while pos > starts[k] {
                pos -= 1;
                let t = theta[order[pos]];
                if t > shift {
                    sum *= (shift - t).exp();
                    shift = t;
                }
                sum += (t - shift).exp();
            }
            log_s0[k] = shift + sum.ln();
        }
        let carried = Self::carry(ds, &log_s0, |_| 1.0);
        Self {
            ds,
            theta: theta.to_vec(),
            log_s0,
            carried,
        }
    }

    /// Forward recurrence `X_k = X_{k-1} S0_k / S0_{k-1} + d_k f(k)`.
    fn carry(ds: &SurvivalDataset, log_s0: &[f64], f: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(log_s0.len());
        let mut prev = 0.0;
        for k in 0..log_s0.len() {
            let decay = if k == 0 {
                0.0
            } else {
                (log_s0[k] - log_s0[k - 1]).exp()
            };
            prev = prev * decay + ds.event_count(k) as f64 * f(k);
            out.push(prev);
        }
        out
    }

    pub(crate) fn log_s0(&self, k: usize) -> f64 {
        self.log_s0[k]
    }

    /// `sum_i a_i theta_i - sum_k d_k log S0_k`.
    pub(crate) fn log_likelihood(&self, event_mass: &[f64]) -> f64 {
        let linear: f64 = event_mass
            .iter()
            .zip(&self.theta)
            .filter(|(a, _)| **a != 0.0)
            .map(|(a, t)| a * t)
            .sum();
        let normalizer: f64 = self
            .log_s0
            .iter()
            .enumerate()
            .map(|(k, l)| self.ds.event_count(k) as f64 * l)
            .sum();
        linear - normalizer
    }

    /// Breslow compensator `Lambda_i = sum_{k: t_k <= X_i} d_k exp(theta_i) / S0_k`.
    pub(crate) fn compensator(&self) -> Vec<f64> {
        let before = self.ds.events_before();
        (0..self.ds.n())
            .map(|i| match before[i] {
                0 => 0.0,
                k => (self.theta[i] - self.log_s0[k - 1]).exp() * self.carried[k - 1],
            })
            .collect()
    }

    /// Diagonal of the negative Hessian in `theta`:
    /// `sum_{k: t_k <= X_i} d_k (pi_ki - pi_ki^2)`.
    pub(crate) fn diagonal_information(&self) -> Vec<f64> {
        // Q_k = S0_k^2 * sum_{k' <= k} d_k' / S0_k'^2
        let mut squared = Vec::with_capacity(self.log_s0.len());
        let mut prev = 0.0;
        for k in 0..self.log_s0.len() {
            let decay = if k == 0 {
                0.0
            } else {
                (2.0 * (self.log_s0[k] - self.log_s0[k - 1])).exp()
            };
            prev = prev * decay + self.ds.event_count(k) as f64;
            squared.push(prev);
        }
        let before = self.ds.events_before();
        (0..self.ds.n())
            .map(|i| match before[i] {
                0 => 0.0,
                k => {
                    let pi = (self.theta[i] - self.log_s0[k - 1]).exp();
                    pi * self.carried[k - 1] - pi * pi * squared[k - 1]
                }
            })
            .collect()
    }

    /// Gradient with respect to the linear predictor: `a - Lambda`.
    pub(crate) fn theta_gradient(&self, event_mass: &[f64]) -> Vec<f64> {
        self.compensator()
            .into_iter()
            .zip(event_mass)
            .map(|(lam, a)| a - lam)
            .collect()
    }

    /// Means of `values` over each risk set under weights `exp(theta)`.
    pub(crate) fn risk_means(&self, values: &[f64]) -> Vec<f64> {
        let k_count = self.log_s0.len();
        let order = self.ds.order();
        let starts = self.ds.risk_starts();
        let mut out = vec![0.0; k_count];
        let mut shift = f64::NEG_INFINITY;
        let (mut w_sum, mut v_sum) = (0.0, 0.0);
        let mut pos = order.len();
        for k in (0..k_count).rev() {
            while pos > starts[k] {
                pos -= 1;
                let i = order[pos];
                let t = self.theta[i];
                if t > shift {
                    let scale = (shift - t).exp();
                    w_sum *= scale;
                    v_sum *= scale;
                    shift = t;
                }
                let w = (t - shift).exp();
                w_sum += w;
                v_sum += w * values[i];
            }
            out[k] = v_sum / w_sum;
        }
        out
    }

    /// Negative Hessian in linear-predictor space applied to `v`.
    pub(crate) fn hessian_apply(&self, v: &[f64]) -> Vec<f64> {
        let means = self.risk_means(v);
        let centered = Self::carry(self.ds, &self.log_s0, |k| means[k]);
        let before = self.ds.events_before();
        (0..self.ds.n())
            .map(|i| match before[i] {
                0 => 0.0,
                k => {
                    let pi = (self.theta[i] - self.log_s0[k - 1]).exp();
                    pi * (v[i] * self.carried[k - 1] - centered[k - 1])
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn dataset() -> SurvivalDataset {
        let times = vec![2.0, 1.0, 2.0, 3.0, 1.5, 3.0];
        let statuses = vec![true, true, true, false, false, true];
        SurvivalDataset::from_arrays(times, statuses, Array2::zeros((6, 0))).unwrap()
    }

    #[test]
    fn compensator_and_diagonal_match_enumeration() {
        let ds = dataset();
        let theta = [0.3, -1.0, 2.0, 0.5, -0.2, 1.1];
        let kernel = RiskSetKernel::new(&ds, &theta);
        let comp = kernel.compensator();
        let diag = kernel.diagonal_information();
        for i in 0..ds.n() {
            let (mut c, mut h) = (0.0, 0.0);
            for k in 0..ds.event_times().len() {
                let tk = ds.event_times()[k];
                if tk > ds.times()[i] {
                    continue;
                }
                let s0: f64 = (0..ds.n())
                    .filter(|&j| ds.times()[j] >= tk)
                    .map(|j| theta[j].exp())
                    .sum();
                let pi = theta[i].exp() / s0;
                let d = ds.event_count(k) as f64;
                c += d * pi;
                h += d * (pi - pi * pi);
            }
            assert!((comp[i] - c).abs() < 1e-12);
            assert!((diag[i] - h).abs() < 1e-12);
        }
    }

    #[test]
    fn large_scores_do_not_overflow() {
        let ds = dataset();
        let theta = [800.0, -700.0, 805.0, 790.0, 1.0, 810.0];
        let kernel = RiskSetKernel::new(&ds, &theta);
        assert!(kernel
            .log_likelihood(&[1.0, 1.0, 1.0, 0.0, 0.0, 1.0])
            .is_finite());
        assert!(kernel.compensator().iter().all(|c| c.is_finite()));
    }
}
