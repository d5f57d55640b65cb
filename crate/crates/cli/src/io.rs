use std::path::Path;

use coxkl::{
    load_dataset, load_scores, ColumnSchema, ExternalScores, SparseVector, SurvivalDataset,
};
use serde::Serialize;
use serde_json::Value;

use crate::failure::{CliResult, Failure};

pub fn read_bytes(path: &str) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| Failure::validation(format!("{path}: {e}")))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::validation(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Failure::validation(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_dataset(path: &str, schema: &ColumnSchema) -> CliResult<SurvivalDataset> {
    load_dataset(read_bytes(path)?.as_slice(), schema).map_err(|e| Failure::from_lib(e, Some(path)))
}

/// Concatenates the score columns of every file, in command-line order.
pub fn read_scores(paths: &[String], dataset: &SurvivalDataset) -> CliResult<Vec<ExternalScores>> {
    let mut out = Vec::new();
    for path in paths {
        let scores = load_scores(read_bytes(path)?.as_slice(), dataset)
            .map_err(|e| Failure::from_lib(e, Some(path)))?;
        out.extend(scores);
    }
    Ok(out)
}

/// Dense coefficients from a fit file: either an unpenalized fit (`beta`) or
/// a single-lambda LASSO fit (`coefficients` as index/value pairs).
pub fn read_coefficients(path: &str, p: usize) -> CliResult<Vec<f64>> {
    let bad = |m: &str| Failure::validation(format!("{path}: {m}"));
    let value: Value =
        serde_json::from_slice(&read_bytes(path)?).map_err(|e| bad(&e.to_string()))?;
    let beta = if value.get("lambdas").is_some() {
        return Err(bad(
            "a regularization path holds many fits; refit at a single --lambda",
        ));
    } else if let Some(beta) = value.get("beta") {
        serde_json::from_value::<Vec<f64>>(beta.clone()).map_err(|e| bad(&format!("beta: {e}")))?
    } else if let Some(coef) = value.get("coefficients") {
        serde_json::from_value::<SparseVector>(coef.clone())
            .map_err(|e| bad(&format!("coefficients: {e}")))?
            .to_dense()
    } else {
        return Err(bad("expected a `beta` or `coefficients` field"));
    };
    if beta.len() != p {
        return Err(bad(&format!(
            "fit has {} coefficients but the dataset has {p} covariates",
            beta.len()
        )));
    }
    Ok(beta)
}

/// The single score column of `path`.
pub fn read_single_score(path: &str, dataset: &SurvivalDataset) -> CliResult<Vec<f64>> {
    let mut scores = read_scores(&[path.to_string()], dataset)?;
    if scores.len() != 1 {
        return Err(Failure::validation(format!(
            "{path}: expected one score column, found {}",
            scores.len()
        )));
    }
    Ok(scores.remove(0).scores)
}
