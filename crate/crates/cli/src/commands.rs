use std::path::Path;

use coxkl::lasso::{self, LassoOptions};
use coxkl::sim::experiment::{write_curves_csv, write_table_csv};
use coxkl::sim::scenario::external_setting;
use coxkl::sim::{
    cell, cell_names, run_experiment, ExperimentConfig, ExperimentReport, Setting, SimScenario,
};
use coxkl::tuning::{
    default_eta_grid, default_lambda_grid, product_eta_points, select_tuning_points, CvOptions,
};
use coxkl::{
    c_index, fit_coxkl, risk_stratify, ColumnSchema, CoxFitOptions, CoxKlProblem, SurvivalDataset,
};
use log::info;
use serde_json::json;

use crate::failure::{CliResult, Failure};
use crate::io::{
    read_bytes, read_coefficients, read_dataset, read_scores, read_single_score, write_bytes,
    write_json,
};
use crate::manifest::{manifest_path, RunManifest};
use crate::{CvArgs, DataArgs, EvaluateArgs, FitArgs, KmArgs, SimulateArgs};

fn load(args: &DataArgs) -> CliResult<SurvivalDataset> {
    let schema = ColumnSchema {
        id: Some(args.id_column.clone()),
        time: args.time_column.clone(),
        status: args.status_column.clone(),
        covariates: None,
    };
    read_dataset(&args.data, &schema)
}

fn inputs<'a>(data: &'a DataArgs, extra: impl IntoIterator<Item = &'a String>) -> Vec<&'a str> {
    std::iter::once(data.data.as_str())
        .chain(extra.into_iter().map(String::as_str))
        .collect()
}

/// One weight per model; a single value is shared by all models.
fn resolve_etas(eta: &[f64], n_models: usize) -> CliResult<Vec<f64>> {
    match (n_models, eta.len()) {
        (0, 0) => Ok(Vec::new()),
        (0, _) => Err(Failure::validation("--eta given without --scores")),
        (_, 0) => Err(Failure::validation("--eta is required with --scores")),
        (m, 1) => Ok(vec![eta[0]; m]),
        (m, k) if k == m => Ok(eta.to_vec()),
        (m, k) => Err(Failure::validation(format!(
            "{k} weights given for {m} external models"
        ))),
    }
}

fn emit(out: Option<&Path>, value: &impl serde::Serialize, manifest: RunManifest) -> CliResult<()> {
    if let Some(path) = out {
        write_json(path, value)?;
        manifest.write(&manifest_path(path))?;
    }
    Ok(())
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let ds = load(&args.data)?;
    let exts = read_scores(&args.scores, &ds)?;
    let etas = resolve_etas(&args.eta, exts.len())?;
    let manifest = RunManifest::new("fit", args, None, &inputs(&args.data, &args.scores))?;
    let out = args.out.as_deref();
    let converged = if !args.lasso {
        let fit = fit_coxkl(&ds, &exts, &etas, &CoxFitOptions::default())?;
        let nonzeros = fit.beta_hat.iter().filter(|b| **b != 0.0).count();
        println!(
            "converged={} objective={} nonzeros={nonzeros}",
            fit.converged, fit.objective
        );
        emit(out, &fit, manifest)?;
        fit.converged
    } else {
        let problem = CoxKlProblem::new(&ds, &exts, &etas)?;
        let opts = LassoOptions::default();
        if let Some(lambda) = args.lambda {
            let fit = lasso::fit_coxkl_lasso(&problem, lambda, None, &opts)?;
            println!(
                "converged={} objective={} nonzeros={}",
                fit.converged,
                fit.objective,
                fit.coefficients.nonzeros()
            );
            emit(out, &fit, manifest)?;
            fit.converged
        } else {
            let ratio = lasso::default_lambda_min_ratio(ds.n(), ds.p());
            let path = lasso::lasso_path(&problem, args.n_lambda, ratio, &opts)?;
            let all = path.converged.iter().all(|&c| c);
            println!(
                "converged={all} objective={} nonzeros={} lambdas={}",
                path.objective_values.last().copied().unwrap_or(f64::NAN),
                path.nonzero_counts.last().copied().unwrap_or(0),
                path.lambdas.len()
            );
            emit(out, &path, manifest)?;
            all
        }
    };
    if !converged && !args.allow_nonconverged {
        return Err(Failure::numerical(
            "optimizer did not converge (pass --allow-nonconverged to accept the result)",
        ));
    }
    Ok(())
}

pub fn cv(args: &CvArgs) -> CliResult<()> {
    let ds = load(&args.data)?;
    let exts = read_scores(&args.scores, &ds)?;
    let grid = if args.eta_grid.is_empty() {
        default_eta_grid()
    } else {
        args.eta_grid.clone()
    };
    let points = product_eta_points(&grid, exts.len());
    let lambda_grid = if !args.lambda_grid.is_empty() {
        Some(args.lambda_grid.clone())
    } else if args.lasso {
        Some(default_lambda_grid(&ds, &exts, &points)?)
    } else {
        None
    };
    let manifest = RunManifest::new(
        "cv",
        args,
        Some(args.seed),
        &inputs(&args.data, &args.scores),
    )?;
    let report = select_tuning_points(
        &ds,
        &exts,
        &points,
        lambda_grid.as_deref(),
        args.folds,
        args.seed,
        &CvOptions::default(),
    )?;
    let i = report
        .eta_grid
        .iter()
        .position(|g| *g == report.selected_eta)
        .unwrap_or(0);
    let j = match (&report.lambda_grid, report.selected_lambda) {
        (Some(g), Some(l)) => g.iter().position(|x| *x == l).unwrap_or(0),
        _ => 0,
    };
    let lambda = report
        .selected_lambda
        .map_or_else(String::new, |l| format!(" lambda={l}"));
    println!(
        "eta={:?}{lambda} cvpl={}",
        report.selected_eta, report.cvpl[i][j]
    );
    emit(args.out.as_deref(), &report, manifest)
}

fn setting_of(n: u8) -> Setting {
    if n == 1 {
        Setting::I
    } else {
        Setting::II
    }
}

fn scenarios(args: &SimulateArgs) -> CliResult<Vec<SimScenario>> {
    let check = |s: &SimScenario| -> CliResult<()> {
        if let Some(n) = args.setting {
            if s.setting != setting_of(n) {
                return Err(Failure::validation(format!(
                    "cell {} is not in setting {n}",
                    s.name
                )));
            }
        }
        s.validate()?;
        Ok(())
    };
    let mut out = Vec::new();
    if let Some(path) = &args.config {
        let mut s: SimScenario = serde_json::from_slice(&read_bytes(path)?)
            .map_err(|e| Failure::validation(format!("{path}: {e}")))?;
        s.seed = args.seed;
        check(&s)?;
        out.push(s);
    }
    for name in &args.cell {
        let s = cell(name, args.seed)?;
        check(&s)?;
        out.push(s);
    }
    if let Some(label) = &args.external {
        let specs = external_setting(label).ok_or_else(|| {
            Failure::validation(format!("unknown external setting '{label}'; valid: E1..E6"))
        })?;
        let setting = if matches!(label.as_str(), "E1" | "E2" | "E3") {
            Setting::I
        } else {
            Setting::II
        };
        let n = args.n.unwrap_or(50);
        let censoring = args.censoring.unwrap_or(0.3);
        let s = SimScenario {
            name: format!("n{n}_c{}_{label}", (censoring * 100.0).round()),
            setting,
            n_internal: n,
            censoring_target: censoring,
            p_l_internal: 1.0,
            beta_true: setting.default_beta(),
            external_specs: specs,
            n_external: 10_000,
            n_test: 1000,
            seed: args.seed,
        };
        check(&s)?;
        out.push(s);
    }
    if out.is_empty() {
        let Some(n) = args.setting else {
            return Err(Failure::validation(
                "give --setting, --cell, --external or --config",
            ));
        };
        for name in cell_names() {
            let s = cell(&name, args.seed)?;
            if s.setting == setting_of(n) {
                out.push(s);
            }
        }
    }
    Ok(out)
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let cells = scenarios(args)?;
    let extra: Vec<String> = args.config.iter().cloned().collect();
    let manifest = RunManifest::new(
        "simulate",
        args,
        Some(args.seed),
        &extra.iter().map(String::as_str).collect::<Vec<_>>(),
    )?;
    let mut reports: Vec<ExperimentReport> = Vec::with_capacity(cells.len());
    for scenario in cells {
        info!("running cell {}", scenario.name);
        let mut config = ExperimentConfig::new(scenario, args.reps);
        config.folds = args.folds;
        let report = run_experiment(&config, args.jobs)?;
        for m in &report.methods {
            println!(
                "{} {} mse={} c_index={:.4}",
                report.scenario.name,
                m.method,
                m.mse.map_or_else(|| "NA".into(), |v| format!("{v:.4}")),
                m.c_index_mean,
            );
        }
        reports.push(report);
    }
    let dir = &args.out;
    write_json(&dir.join("report.json"), &reports)?;
    let mut table = Vec::new();
    write_table_csv(&reports, &mut table)?;
    write_bytes(&dir.join("table.csv"), &table)?;
    let mut curves = Vec::new();
    write_curves_csv(&reports, &mut curves)?;
    write_bytes(&dir.join("curves.csv"), &curves)?;
    manifest.write(&dir.join("manifest.json"))
}

fn risk_scores(
    data: &DataArgs,
    ds: &SurvivalDataset,
    fit: Option<&String>,
    scores: Option<&String>,
) -> CliResult<Vec<f64>> {
    match (fit, scores) {
        (Some(path), _) => Ok(ds.linear_predictor(&read_coefficients(path, ds.p())?)),
        (None, Some(path)) => read_single_score(path, ds),
        (None, None) => Err(Failure::validation(format!(
            "{}: give --fit or --scores",
            data.data
        ))),
    }
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let ds = load(&args.data)?;
    let risk = risk_scores(&args.data, &ds, args.fit.as_ref(), args.scores.as_ref())?;
    let manifest = RunManifest::new(
        "evaluate",
        args,
        None,
        &inputs(&args.data, args.fit.iter().chain(&args.scores)),
    )?;
    let c = c_index(ds.times(), ds.statuses(), &risk)?;
    println!("c_index={c:.3}");
    emit(
        args.out.as_deref(),
        &json!({ "c_index": c, "n": ds.n() }),
        manifest,
    )
}

pub fn km(args: &KmArgs) -> CliResult<()> {
    let ds = load(&args.data)?;
    let risk = risk_scores(&args.data, &ds, args.fit.as_ref(), args.scores.as_ref())?;
    let manifest = RunManifest::new(
        "km",
        args,
        None,
        &inputs(&args.data, args.fit.iter().chain(&args.scores)),
    )?;
    let strat = risk_stratify(&risk, &args.cuts, ds.times(), ds.statuses())?;
    for w in &strat.warnings {
        eprintln!("warning: {w}");
    }
    let sizes: Vec<String> = strat.group_sizes.iter().map(usize::to_string).collect();
    println!("group_sizes={}", sizes.join(","));
    let mut csv = Vec::new();
    coxkl::metrics::write_km_csv(&strat.curves, &mut csv)?;
    match &args.out {
        Some(path) => {
            write_bytes(path, &csv)?;
            manifest.write(&manifest_path(path))
        }
        None => {
            print!("{}", String::from_utf8_lossy(&csv));
            Ok(())
        }
    }
}
