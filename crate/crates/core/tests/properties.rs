mod common;

use common::*;
use coxkl::metrics::concordance_counts;
use coxkl::{
    c_index, coxkl_objective, coxkl_score_and_information, external_weighted_covariates, fit_cox,
    fit_coxkl, kaplan_meier, kl_divergence, load_dataset, log_partial_likelihood, risk_set,
    score_and_information, write_dataset, ColumnSchema, CoxFitOptions, ExternalScores,
    SurvivalDataset,
};
use ndarray::Array2;
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = SurvivalDataset> {
    (any::<u64>(), 8usize..40, 1usize..4, any::<bool>())
        .prop_map(|(seed, n, p, ties)| random_dataset(seed, n, p, ties))
}

fn dataset_and_external() -> impl Strategy<Value = (SurvivalDataset, ExternalScores)> {
    (dataset(), any::<u64>()).prop_map(|(ds, seed)| {
        let ext = random_external(&ds, seed);
        (ds, ext)
    })
}

fn beta(p: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, p)
}

fn with_covariates(ds: &SurvivalDataset, z: Array2<f64>) -> SurvivalDataset {
    SurvivalDataset::from_arrays(ds.times().to_vec(), ds.statuses().to_vec(), z).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn risk_sets_cover_events_and_nest(ds in dataset()) {
        let k = ds.event_times().len();
        prop_assert!(k >= 1);
        for i in 0..k {
            prop_assert!(ds.risk_index(i).len() >= ds.event_count(i));
            prop_assert!(ds.event_count(i) >= 1);
            for e in ds.event_index(i) {
                prop_assert!(ds.risk_index(i).contains(e));
            }
            if i + 1 < k {
                prop_assert!(ds.risk_index(i + 1).iter().all(|j| ds.risk_index(i).contains(j)));
            }
        }
    }

    #[test]
    fn risk_set_is_monotone(ds in dataset(), a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let outer = risk_set(&ds, lo.max(1e-9));
        prop_assert!(risk_set(&ds, hi.max(1e-9)).iter().all(|j| outer.contains(j)));
    }

    #[test]
    fn canonical_csv_round_trips(ds in dataset()) {
        let mut first = Vec::new();
        write_dataset(&ds, &mut first).unwrap();
        let back = load_dataset(first.as_slice(), &ColumnSchema::default()).unwrap();
        let mut second = Vec::new();
        write_dataset(&back, &mut second).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(back.times(), ds.times());
        prop_assert_eq!(back.covariates(), ds.covariates());
    }

    #[test]
    fn cox_likelihood_matches_pairwise_oracle(ds in dataset(), b in beta(3)) {
        let b = &b[..ds.p()];
        let fast = log_partial_likelihood(&ds, b).unwrap();
        prop_assert!(close(fast, naive_loglik(&ds, b), 1e-10));
    }

    #[test]
    fn cox_derivatives_match_finite_differences(ds in dataset(), b in beta(3)) {
        let b = &b[..ds.p()];
        let f = |x: &[f64]| log_partial_likelihood(&ds, x).unwrap();
        let (score, info) = score_and_information(&ds, b).unwrap();
        let fd = fd_gradient(f, b, 1e-5);
        for j in 0..ds.p() {
            prop_assert!(close(score[j], fd[j], 1e-6), "score {} vs {}", score[j], fd[j]);
        }
        let jac = fd_jacobian(|x| score_and_information(&ds, x).unwrap().0, b, 1e-5);
        for j in 0..ds.p() {
            for l in 0..ds.p() {
                prop_assert!(close(info[[j, l]], -jac[j][l], 1e-4), "info {} vs {}", info[[j, l]], -jac[j][l]);
            }
        }
    }

    #[test]
    fn newton_objective_never_decreases(ds in dataset()) {
        let fit = fit_cox(&ds, &CoxFitOptions::default()).unwrap();
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12 * (1.0 + w[0].abs()), "{:?}", fit.objective_trace);
        }
    }

    #[test]
    fn covariate_shift_leaves_estimate_unchanged(ds in dataset(), c in -5.0f64..5.0, j in 0usize..3) {
        let j = j % ds.p();
        let base = fit_cox(&ds, &CoxFitOptions::default()).unwrap();
        prop_assume!(base.converged);
        let mut z = ds.covariates().clone();
        z.column_mut(j).mapv_inplace(|v| v + c);
        let shifted = fit_cox(&with_covariates(&ds, z), &CoxFitOptions::default()).unwrap();
        for (a, b) in base.beta_hat.iter().zip(&shifted.beta_hat) {
            prop_assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn empty_external_set_is_plain_cox(ds in dataset()) {
        let a = fit_cox(&ds, &CoxFitOptions::default()).unwrap();
        let b = fit_coxkl(&ds, &[], &[], &CoxFitOptions::default()).unwrap();
        for (x, y) in a.beta_hat.iter().zip(&b.beta_hat) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
        prop_assert!(b.eta.is_empty());
    }

    #[test]
    fn kl_is_nonnegative_and_matches_oracle((ds, ext) in dataset_and_external(), b in beta(3)) {
        let b = &b[..ds.p()];
        let kl = kl_divergence(&ds, &ext, b).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!(close(kl, naive_kl(&ds, &ext.scores, b), 1e-9), "{kl}");
    }

    #[test]
    fn kl_vanishes_when_densities_coincide(ds in dataset(), b in beta(3), shift in -3.0f64..3.0) {
        let b = &b[..ds.p()];
        let scores = ds.linear_predictor(b).into_iter().map(|v| v + shift).collect();
        let ext = ExternalScores::new("same", scores).unwrap();
        prop_assert!(kl_divergence(&ds, &ext, b).unwrap() <= 1e-10);
    }

    #[test]
    fn weighted_objective_differences_match_direct_kl(
        (ds, ext) in dataset_and_external(),
        eta in 0.0f64..20.0,
        b1 in beta(3),
        b2 in beta(3),
    ) {
        let (b1, b2) = (&b1[..ds.p()], &b2[..ds.p()]);
        let obj = |b: &[f64]| coxkl_objective(&ds, std::slice::from_ref(&ext), &[eta], b).unwrap();
        let direct = |b: &[f64]| naive_loglik(&ds, b) - eta * naive_kl(&ds, &ext.scores, b);
        let lhs = (1.0 + eta) * (obj(b1) - obj(b2));
        let rhs = direct(b1) - direct(b2);
        prop_assert!((lhs - rhs).abs() <= 1e-8 * 1f64.max(lhs.abs()).max(rhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn coxkl_derivatives_match_finite_differences((ds, ext) in dataset_and_external(), eta in 0.0f64..10.0, b in beta(3)) {
        let b = &b[..ds.p()];
        let exts = [ext];
        let n = ds.n() as f64;
        let f = |x: &[f64]| coxkl_objective(&ds, &exts, &[eta], x).unwrap() / n;
        let (score, info) = coxkl_score_and_information(&ds, &exts, &[eta], b).unwrap();
        let fd = fd_gradient(f, b, 1e-5);
        for j in 0..ds.p() {
            prop_assert!(close(score[j], fd[j], 1e-6), "score {} vs {}", score[j], fd[j]);
        }
        let jac = fd_jacobian(|x| coxkl_score_and_information(&ds, &exts, &[eta], x).unwrap().0, b, 1e-5);
        for j in 0..ds.p() {
            for l in 0..ds.p() {
                prop_assert!(close(info[[j, l]], -jac[j][l], 1e-4));
            }
        }
    }

    #[test]
    fn external_score_shift_leaves_fit_unchanged((ds, ext) in dataset_and_external(), eta in 0.1f64..10.0, c in -20.0f64..20.0) {
        let shifted = ExternalScores::new("s", ext.scores.iter().map(|r| r + c).collect()).unwrap();
        let opts = CoxFitOptions::default();
        let a = fit_coxkl(&ds, std::slice::from_ref(&ext), &[eta], &opts).unwrap();
        let b = fit_coxkl(&ds, std::slice::from_ref(&shifted), &[eta], &opts).unwrap();
        prop_assume!(a.converged);
        for (x, y) in a.beta_hat.iter().zip(&b.beta_hat) {
            prop_assert!((x - y).abs() <= 1e-8, "{x} vs {y}");
        }
        let za = external_weighted_covariates(&ds, &ext).unwrap().z_tilde;
        let zb = external_weighted_covariates(&ds, &shifted).unwrap().z_tilde;
        for (x, y) in za.iter().zip(zb.iter()) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn pseudo_covariates_stay_in_risk_set_envelope((ds, ext) in dataset_and_external()) {
        let zt = external_weighted_covariates(&ds, &ext).unwrap().z_tilde;
        for k in 0..ds.event_times().len() {
            for j in 0..ds.p() {
                let vals: Vec<f64> = ds.risk_index(k).iter().map(|&i| ds.covariates()[[i, j]]).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(zt[[k, j]] >= lo - 1e-12 && zt[[k, j]] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn concordance_matches_all_pairs(
        times in prop::collection::vec(1u32..30, 2..120),
        flags in prop::collection::vec(any::<bool>(), 120),
        scores in prop::collection::vec(-5i32..5, 120),
    ) {
        let n = times.len();
        let t: Vec<f64> = times.iter().map(|&v| v as f64).collect();
        let s: Vec<f64> = scores[..n].iter().map(|&v| v as f64 * 0.5).collect();
        let counts = concordance_counts(&t, &flags[..n], &s).unwrap();
        let (c, d, tie, usable) = naive_concordance(&t, &flags[..n], &s);
        prop_assert_eq!((counts.concordant, counts.discordant, counts.tied_risk, counts.usable), (c, d, tie, usable));
    }

    #[test]
    fn c_index_reverses_and_ignores_monotone_transforms(
        times in prop::collection::vec(0.1f64..10.0, 3..60),
        scores in prop::collection::vec(-3.0f64..3.0, 60),
    ) {
        let n = times.len();
        let status: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
        let s = &scores[..n];
        let mut sorted = s.to_vec();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[0] < w[1]));
        let Ok(c) = c_index(&times, &status, s) else { return Ok(()) };
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((c + c_index(&times, &status, &neg).unwrap() - 1.0).abs() < 1e-12);
        let warped: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + v.powi(3)).collect();
        prop_assert_eq!(c, c_index(&times, &status, &warped).unwrap());
    }

    #[test]
    fn kaplan_meier_matches_product_limit(
        times in prop::collection::vec(1u32..25, 1..100),
        flags in prop::collection::vec(any::<bool>(), 100),
    ) {
        let t: Vec<f64> = times.iter().map(|&v| v as f64).collect();
        let d = &flags[..t.len()];
        let km = kaplan_meier(&t, d).unwrap();
        let oracle = naive_km(&t, d);
        prop_assert_eq!(km.times().len(), oracle.len());
        for ((u, s), (ou, os)) in km.times().iter().zip(km.values()).zip(&oracle) {
            prop_assert_eq!(u, ou);
            prop_assert_eq!(s, os);
        }
    }

    #[test]
    fn uncensored_kaplan_meier_is_one_minus_ecdf(times in prop::collection::vec(1u32..40, 1..80)) {
        let t: Vec<f64> = times.iter().map(|&v| v as f64).collect();
        let km = kaplan_meier(&t, &vec![true; t.len()]).unwrap();
        for &u in km.times() {
            let ecdf = t.iter().filter(|&&v| v <= u).count() as f64 / t.len() as f64;
            prop_assert!((km.eval(u) - (1.0 - ecdf)).abs() < 1e-12);
        }
    }
}
