use coxkl::sim::experiment::{write_curves_csv, write_table_csv};
use coxkl::sim::{cell, run_experiment, ExperimentConfig};

#[test]
fn reports_depend_only_on_scenario_and_seed() {
    let config = ExperimentConfig::new(cell("n50_c30_E2", 11).unwrap(), 12);
    let a = run_experiment(&config, Some(1)).unwrap();
    let b = run_experiment(&config, Some(3)).unwrap();
    assert_eq!(a, b);
    let csv = |r: &coxkl::sim::ExperimentReport| {
        let (mut t, mut c) = (Vec::new(), Vec::new());
        write_table_csv(std::slice::from_ref(r), &mut t).unwrap();
        write_curves_csv(std::slice::from_ref(r), &mut c).unwrap();
        (t, c)
    };
    assert_eq!(csv(&a), csv(&b));

    let other = run_experiment(
        &ExperimentConfig::new(cell("n50_c30_E2", 12).unwrap(), 12),
        Some(1),
    )
    .unwrap();
    assert_ne!(
        a.method("internal").unwrap().mse,
        other.method("internal").unwrap().mse
    );
}

#[test]
fn internal_error_shrinks_with_sample_size() {
    let mut mse = Vec::new();
    for n in [50, 100, 400] {
        let mut scenario = cell("n50_c30_E1", 5).unwrap();
        scenario.n_internal = n;
        scenario.n_test = 200;
        let mut config = ExperimentConfig::new(scenario, 100);
        // only the internal fit matters here
        config.eta_grid = vec![0.0, 1.0];
        config.sweep_grid = vec![0.0];
        let report = run_experiment(&config, None).unwrap();
        mse.push(report.method("internal").unwrap().mse.unwrap());
    }
    assert!(mse[0] > mse[1] && mse[1] > mse[2], "{mse:?}");
}

#[test]
fn homogeneous_external_improves_at_largest_weight() {
    let report = run_experiment(
        &ExperimentConfig::new(cell("n50_c60_E1", 3).unwrap(), 100),
        None,
    )
    .unwrap();
    let first = report.sweep.first().unwrap().mse.unwrap();
    let last = report.sweep.last().unwrap().mse.unwrap();
    assert!(last < first, "{first} -> {last}");
}
