//! Right-censored survival data, risk sets and the canonical CSV format.
//!
//! A [`SurvivalDataset`] keeps covariates in one dense `n x p` matrix and
//! precomputes the distinct event times together with the risk-set layout.
//! Subjects are sorted by observed time once; the risk set at the `k`-th
//! event time is then a suffix of that ordering, which is what every fitting
//! routine in this crate sweeps over.
//!
//! Ties follow the Breslow convention: all events at `t_k` share one
//! denominator, and subjects censored exactly at `t_k` stay in its risk set.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::StepFunction;

/// One subject: observed time, event indicator and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub id: String,
    pub time: f64,
    pub status: bool,
    pub covariates: Vec<f64>,
}

impl SurvivalRecord {
    pub fn new(id: impl Into<String>, time: f64, status: bool, covariates: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            time,
            status,
            covariates,
        }
    }
}

/// Immutable, validated survival dataset with precomputed risk-set indexing.
#[derive(Debug, Clone)]
pub struct SurvivalDataset {
    ids: Vec<String>,
    times: Vec<f64>,
    statuses: Vec<bool>,
    covariates: Array2<f64>,
    covariate_names: Vec<String>,
    /// Subject indices sorted by ascending time (stable).
    order: Vec<usize>,
    event_times: Vec<f64>,
    event_index: Vec<Vec<usize>>,
    /// Position in `order` where the risk set of each event time starts.
    risk_start: Vec<usize>,
    /// Number of event times `t_k <= X_i`, per subject.
    events_before: Vec<usize>,
}

impl SurvivalDataset {
    /// Builds a dataset from parallel arrays. Zero events are allowed here
    /// (training folds may have none); [`load_dataset`] rejects them.
    pub fn from_parts(
        ids: Vec<String>,
        times: Vec<f64>,
        statuses: Vec<bool>,
        covariates: Array2<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = times.len();
        if ids.len() != n || statuses.len() != n || covariates.nrows() != n {
            return Err(Error::Validation(format!(
                "length mismatch: {} ids, {} times, {} statuses, {} covariate rows",
                ids.len(),
                n,
                statuses.len(),
                covariates.nrows()
            )));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::Validation(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                covariates.ncols()
            )));
        }
        for (i, &t) in times.iter().enumerate() {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::Validation(format!(
                    "record {} (`{}`): time must be positive and finite, got {t}",
                    i + 1,
                    ids[i]
                )));
            }
        }
        if let Some(((i, j), v)) = covariates.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "record {} (`{}`): covariate `{}` is not finite ({v})",
                i + 1,
                ids[i],
                covariate_names[j]
            )));
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

        let mut event_times = Vec::new();
        let mut event_index: Vec<Vec<usize>> = Vec::new();
        let mut risk_start = Vec::new();
        let mut pos = 0;
        while pos < n {
            let t = times[order[pos]];
            let mut end = pos;
            while end < n && times[order[end]] == t {
                end += 1;
            }
            let mut events: Vec<usize> = order[pos..end]
                .iter()
                .copied()
                .filter(|&i| statuses[i])
                .collect();
            if !events.is_empty() {
                events.sort_unstable();
                event_times.push(t);
                event_index.push(events);
                risk_start.push(pos);
            }
            pos = end;
        }

        let mut events_before = vec![0; n];
        let mut k = 0;
        for &i in &order {
            while k < event_times.len() && event_times[k] <= times[i] {
                k += 1;
            }
            events_before[i] = k;
        }

        Ok(Self {
            ids,
            times,
            statuses,
            covariates,
            covariate_names,
            order,
            event_times,
            event_index,
            risk_start,
            events_before,
        })
    }

    pub fn from_records(records: Vec<SurvivalRecord>) -> Result<Self> {
        let p = records.first().map_or(0, |r| r.covariates.len());
        let names = (1..=p).map(|j| format!("z{j}")).collect();
        Self::from_records_named(records, names)
    }

    pub fn from_records_named(records: Vec<SurvivalRecord>, names: Vec<String>) -> Result<Self> {
        let n = records.len();
        let p = names.len();
        let mut covariates = Array2::<f64>::zeros((n, p));
        let mut ids = Vec::with_capacity(n);
        let mut times = Vec::with_capacity(n);
        let mut statuses = Vec::with_capacity(n);
        for (i, r) in records.into_iter().enumerate() {
            if r.covariates.len() != p {
                return Err(Error::Validation(format!(
                    "record {} (`{}`) has {} covariates, expected {p}",
                    i + 1,
                    r.id,
                    r.covariates.len()
                )));
            }
            for (j, v) in r.covariates.iter().enumerate() {
                covariates[[i, j]] = *v;
            }
            ids.push(r.id);
            times.push(r.time);
            statuses.push(r.status);
        }
        Self::from_parts(ids, times, statuses, covariates, names)
    }

    /// Dataset from a covariate matrix, with ids `1..=n`.
    pub fn from_arrays(
        times: Vec<f64>,
        statuses: Vec<bool>,
        covariates: Array2<f64>,
    ) -> Result<Self> {
        let ids = (1..=times.len()).map(|i| i.to_string()).collect();
        let names = (1..=covariates.ncols()).map(|j| format!("z{j}")).collect();
        Self::from_parts(ids, times, statuses, covariates, names)
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn statuses(&self) -> &[bool] {
        &self.statuses
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.covariates.row(i)
    }

    pub fn record(&self, i: usize) -> SurvivalRecord {
        SurvivalRecord {
            id: self.ids[i].clone(),
            time: self.times[i],
            status: self.statuses[i],
            covariates: self.covariates.row(i).to_vec(),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = SurvivalRecord> + '_ {
        (0..self.n()).map(|i| self.record(i))
    }

    pub fn n_events(&self) -> usize {
        self.statuses.iter().filter(|&&s| s).count()
    }

    /// Distinct event times `t_1 < ... < t_K`.
    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    /// Subjects failing at the `k`-th event time (0-based `k`).
    pub fn event_index(&self, k: usize) -> &[usize] {
        &self.event_index[k]
    }

    /// Number of events `d_k` at the `k`-th event time.
    pub fn event_count(&self, k: usize) -> usize {
        self.event_index[k].len()
    }

    /// Members of the risk set at the `k`-th event time, in time order.
    pub fn risk_index(&self, k: usize) -> &[usize] {
        &self.order[self.risk_start[k]..]
    }

    pub(crate) fn order(&self) -> &[usize] {
        &self.order
    }

    pub(crate) fn risk_starts(&self) -> &[usize] {
        &self.risk_start
    }

    pub(crate) fn events_before(&self) -> &[usize] {
        &self.events_before
    }

    /// Sub-dataset with the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let covariates = self.covariates.select(ndarray::Axis(0), rows);
        Self::from_parts(
            rows.iter().map(|&i| self.ids[i].clone()).collect(),
            rows.iter().map(|&i| self.times[i]).collect(),
            rows.iter().map(|&i| self.statuses[i]).collect(),
            covariates,
            self.covariate_names.clone(),
        )
    }

    /// Same subjects with a different covariate matrix (e.g. augmented).
    pub fn with_covariates(&self, covariates: Array2<f64>, names: Vec<String>) -> Result<Self> {
        Self::from_parts(
            self.ids.clone(),
            self.times.clone(),
            self.statuses.clone(),
            covariates,
            names,
        )
    }

    /// Columns whose values are identical for every subject.
    pub fn constant_columns(&self) -> Vec<bool> {
        self.covariates
            .columns()
            .into_iter()
            .map(|col| match col.iter().next() {
                Some(&first) => col.iter().all(|&v| v == first),
                None => true,
            })
            .collect()
    }

    /// Linear predictor `Z beta` for every subject.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        // column accumulation pays off when few coefficients are nonzero
        let nonzero: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
        if nonzero.len() * 8 > beta.len() {
            return self.covariates.dot(&ArrayView1::from(beta)).to_vec();
        }
        let mut theta = vec![0.0; self.n()];
        for &j in &nonzero {
            for (t, v) in theta.iter_mut().zip(self.covariates.column(j)) {
                *t += beta[j] * v;
            }
        }
        theta
    }
}

/// The at-risk set `{i : X_i >= t}`, as ascending subject indices.
pub fn risk_set(dataset: &SurvivalDataset, t: f64) -> Vec<usize> {
    let order = dataset.order();
    let times = dataset.times();
    let start = order.partition_point(|&i| times[i] < t);
    let mut members = order[start..].to_vec();
    members.sort_unstable();
    members
}

/// Breslow estimate of the cumulative baseline hazard at coefficients `beta`.
pub fn breslow_baseline(dataset: &SurvivalDataset, beta: &[f64]) -> Result<StepFunction> {
    if beta.len() != dataset.p() {
        return Err(Error::InvalidArgument(format!(
            "beta has length {}, dataset has {} covariates",
            beta.len(),
            dataset.p()
        )));
    }
    let theta = dataset.linear_predictor(beta);
    let kernel = crate::kernel::RiskSetKernel::new(dataset, &theta);
    let mut cumulative = 0.0;
    let values = (0..dataset.event_times().len())
        .map(|k| {
            cumulative += dataset.event_count(k) as f64 * (-kernel.log_s0(k)).exp();
            cumulative
        })
        .collect();
    StepFunction::new(dataset.event_times().to_vec(), values, 0.0)
}

/// Column mapping for [`load_dataset`]. `None` for `id` numbers rows from 1;
/// `None` for `covariates` takes every remaining column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub id: Option<String>,
    pub time: String,
    pub status: String,
    pub covariates: Option<Vec<String>>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            id: Some("id".into()),
            time: "time".into(),
            status: "status".into(),
            covariates: None,
        }
    }
}

fn column_position(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse {
            row: 0,
            column: name.to_string(),
            message: "column missing from header".into(),
        })
}

fn parse_cell(record: &csv::StringRecord, pos: usize, row: usize, column: &str) -> Result<f64> {
    let raw = record.get(pos).unwrap_or("").trim();
    raw.parse::<f64>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("`{raw}` is not a number"),
    })
}

/// Reads a comma-separated dataset with a header row.
///
/// Row numbers in errors count data rows from 1. Status must be `0` or `1`.
pub fn load_dataset<R: Read>(source: R, schema: &ColumnSchema) -> Result<SurvivalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let id_pos = match &schema.id {
        Some(name) => Some(column_position(&headers, name)?),
        None => None,
    };
    let time_pos = column_position(&headers, &schema.time)?;
    let status_pos = column_position(&headers, &schema.status)?;
    let covariate_names: Vec<String> = match &schema.covariates {
        Some(cols) => cols.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != id_pos && *j != time_pos && *j != status_pos)
            .map(|(_, h)| h.trim().to_string())
            .collect(),
    };
    let covariate_pos = covariate_names
        .iter()
        .map(|c| column_position(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let mut ids = Vec::new();
    let mut times = Vec::new();
    let mut statuses = Vec::new();
    let mut values = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record?;
        ids.push(match id_pos {
            Some(pos) => record.get(pos).unwrap_or("").trim().to_string(),
            None => row.to_string(),
        });
        let time = parse_cell(&record, time_pos, row, &schema.time)?;
        if time <= 0.0 || !time.is_finite() {
            return Err(Error::Validation(format!(
                "row {row}: time must be positive and finite, got {time}"
            )));
        }
        times.push(time);
        let status = match record.get(status_pos).map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            other => {
                return Err(Error::Parse {
                    row,
                    column: schema.status.clone(),
                    message: format!("status must be 0 or 1, got `{}`", other.unwrap_or("")),
                })
            }
        };
        statuses.push(status);
        for (name, &pos) in covariate_names.iter().zip(&covariate_pos) {
            let v = parse_cell(&record, pos, row, name)?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: "covariate must be finite".into(),
                });
            }
            values.push(v);
        }
    }
    if !statuses.iter().any(|&s| s) {
        return Err(Error::NoEvents);
    }
    let covariates = Array2::from_shape_vec((times.len(), covariate_names.len()), values)
        .map_err(|e| Error::Validation(e.to_string()))?;
    SurvivalDataset::from_parts(ids, times, statuses, covariates, covariate_names)
}

/// Writes the canonical `id,time,status,<covariates>` format. Floats use the
/// shortest representation that parses back to the same bits.
pub fn write_dataset<W: Write>(dataset: &SurvivalDataset, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec!["id".to_string(), "time".into(), "status".into()];
    header.extend(dataset.covariate_names().iter().cloned());
    writer.write_record(&header)?;
    for i in 0..dataset.n() {
        let mut row = vec![
            dataset.ids[i].clone(),
            dataset.times[i].to_string(),
            if dataset.statuses[i] { "1" } else { "0" }.to_string(),
        ];
        row.extend(dataset.covariates.row(i).iter().map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
