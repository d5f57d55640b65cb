//! `coxkl`: fit, tune, simulate and evaluate Cox models that borrow strength
//! from external risk scores.

mod commands;
mod failure;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use failure::EXIT_VALIDATION;

#[derive(Debug, Parser)]
#[command(
    name = "coxkl",
    version,
    about = "Cox models integrating external risk scores through a KL penalty"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit an internal Cox, CoxKL or CoxKL-LASSO model.
    Fit(FitArgs),
    /// Choose the integration weight (and lambda) by cross-validated partial likelihood.
    Cv(CvArgs),
    /// Run Monte Carlo simulation cells and write report tables.
    Simulate(SimulateArgs),
    /// Harrell's C-index of a fitted model (or of scores) on a dataset.
    Evaluate(EvaluateArgs),
    /// Kaplan-Meier curves for percentile risk groups.
    Km(KmArgs),
}

/// Column names of the dataset CSV.
#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Dataset CSV with a header row: id, time, status (0/1) and covariates.
    #[arg(long, value_name = "FILE")]
    pub data: String,
    /// Name of the subject id column.
    #[arg(long, default_value = "id")]
    pub id_column: String,
    /// Name of the observed-time column.
    #[arg(long, default_value = "time")]
    pub time_column: String,
    /// Name of the event-indicator column.
    #[arg(long, default_value = "status")]
    pub status_column: String,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// External scores CSV (`id,score` or `id,score_1,...`); repeatable.
    #[arg(long, value_name = "FILE")]
    pub scores: Vec<String>,
    /// Integration weights, one per external model or a single shared value.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub eta: Vec<f64>,
    /// Add an L1 penalty; without --lambda the whole path is written.
    #[arg(long)]
    pub lasso: bool,
    /// L1 penalty weight (requires --lasso).
    #[arg(long, requires = "lasso")]
    pub lambda: Option<f64>,
    /// Number of lambda values when writing a path.
    #[arg(long, default_value_t = 100)]
    pub n_lambda: usize,
    /// Where to write the fit JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Exit 0 even if the optimizer did not converge.
    #[arg(long)]
    pub allow_nonconverged: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// External scores CSV; repeatable.
    #[arg(long, value_name = "FILE", required = true)]
    pub scores: Vec<String>,
    /// Candidate weights (per model; several models use the Cartesian product).
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub eta_grid: Vec<f64>,
    /// Tune a CoxKL-LASSO fit as well; uses a default lambda grid unless given.
    #[arg(long)]
    pub lasso: bool,
    /// Candidate lambda values (implies --lasso).
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub lambda_grid: Vec<f64>,
    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Seed for the fold assignment.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Where to write the CV report JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    #[serde(skip)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Simulation setting: 1 (linear truth) or 2 (misspecified truth).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub setting: Option<u8>,
    /// Named cell, e.g. n50_c60_E1; repeatable. Without cells or explicit
    /// parameters every cell of --setting runs.
    #[arg(long)]
    pub cell: Vec<String>,
    /// Explicit cell: internal sample size.
    #[arg(long, requires = "external")]
    pub n: Option<usize>,
    /// Explicit cell: censoring proportion in [0, 0.95].
    #[arg(long, requires = "external")]
    pub censoring: Option<f64>,
    /// Explicit cell: external setting E1..E6.
    #[arg(long)]
    pub external: Option<String>,
    /// Scenario JSON (the `scenario` object of a report).
    #[arg(long, value_name = "FILE", conflicts_with_all = ["cell", "external"])]
    pub config: Option<String>,
    /// Monte Carlo replicates per cell.
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    /// Cross-validation folds inside each replicate.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory for report.json, table.csv, curves.csv and manifest.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Worker threads for replicates (results do not depend on it).
    #[arg(long)]
    #[serde(skip)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Fit JSON written by `coxkl fit` (single fit, not a path).
    #[arg(
        long,
        value_name = "FILE",
        required_unless_present = "scores",
        conflicts_with = "scores"
    )]
    pub fit: Option<String>,
    /// Scores CSV with one score column, evaluated directly.
    #[arg(long, value_name = "FILE")]
    pub scores: Option<String>,
    /// Where to write the evaluation JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct KmArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Scores CSV with one score column.
    #[arg(
        long,
        value_name = "FILE",
        required_unless_present = "fit",
        conflicts_with = "fit"
    )]
    pub scores: Option<String>,
    /// Fit JSON whose linear predictor defines risk.
    #[arg(long, value_name = "FILE")]
    pub fit: Option<String>,
    /// Percentile cutpoints, strictly increasing in (0, 100).
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "20,80")]
    pub cuts: Vec<f64>,
    /// Where to write the `group,t,survival` CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // replicate-level warnings are summarized in the report instead
    let level = if matches!(cli.command, Command::Simulate(_)) {
        "error"
    } else {
        "warn"
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let jobs = match &cli.command {
        Command::Cv(a) => a.jobs,
        Command::Simulate(a) => a.jobs,
        _ => None,
    };
    if let Some(j) = jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(EXIT_VALIDATION);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Cv(a) => commands::cv(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Km(a) => commands::km(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
