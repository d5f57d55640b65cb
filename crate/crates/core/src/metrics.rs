//! Discrimination and survival-curve metrics.
//!
//! Conventions:
//! - C-index pairs `(i, j)` are usable when `X_i < X_j` and `i` had an
//!   event, or when the times are equal and only `i` had an event (a subject
//!   censored at an event time counts as surviving longer, as in the risk
//!   sets). Higher risk for the earlier failure is concordant; tied risk
//!   scores earn half credit.
//! - Kaplan–Meier keeps subjects censored at an event time in that risk set.

use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-continuous step function with jumps at strictly increasing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    times: Vec<f64>,
    values: Vec<f64>,
    /// Value before the first jump.
    initial: f64,
}

impl StepFunction {
    pub fn new(times: Vec<f64>, values: Vec<f64>, initial: f64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Validation(format!(
                "{} times for {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation(
                "step times must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            times,
            values,
            initial,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => self.initial,
            k => self.values[k - 1],
        }
    }

    /// Two-column `t,value` CSV.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["t", "value"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(source: R, initial: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(source);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |pos: usize, column: &str| {
                rec.get(pos)
                    .unwrap_or("")
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse {
                        row: row + 1,
                        column: column.into(),
                        message: e.to_string(),
                    })
            };
            times.push(parse(0, "t")?);
            values.push(parse(1, "value")?);
        }
        Self::new(times, values, initial)
    }
}

fn check_lengths(times: &[f64], statuses: &[bool], scores: Option<&[f64]>) -> Result<()> {
    let n = times.len();
    if statuses.len() != n || scores.is_some_and(|s| s.len() != n) {
        return Err(Error::InvalidArgument(
            "times, statuses and scores must have equal lengths".into(),
        ));
    }
    Ok(())
}

/// Pair counts behind Harrell's C-index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcordanceCounts {
    pub concordant: u64,
    pub discordant: u64,
    pub tied_risk: u64,
    pub usable: u64,
}

impl ConcordanceCounts {
    pub fn c_index(&self) -> Result<f64> {
        if self.usable == 0 {
            return Err(Error::UndefinedMetric(
                "no usable pairs for the C-index".into(),
            ));
        }
        Ok((2 * self.concordant + self.tied_risk) as f64 / (2 * self.usable) as f64)
    }
}

struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< i`.
    fn below(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Concordance counts in `O(n log n)`.
pub fn concordance_counts(
    times: &[f64],
    statuses: &[bool],
    risk_scores: &[f64],
) -> Result<ConcordanceCounts> {
    check_lengths(times, statuses, Some(risk_scores))?;
    if risk_scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("risk scores must not be NaN".into()));
    }
    let n = times.len();
    let mut distinct: Vec<f64> = risk_scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let rank = |s: f64| distinct.partition_point(|&d| d < s);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut tree = Fenwick(vec![0; distinct.len() + 1]);
    let mut inserted = 0u64;
    let mut counts = ConcordanceCounts::default();
    let mut start = 0;
    while start < n {
        let t = times[order[start]];
        let mut end = start;
        while end < n && times[order[end]] == t {
            end += 1;
        }
        let group = &order[start..end];
        for &j in group.iter().filter(|&&j| !statuses[j]) {
            tree.add(rank(risk_scores[j]));
            inserted += 1;
        }
        for &i in group.iter().filter(|&&i| statuses[i]) {
            let r = rank(risk_scores[i]);
            let lower = tree.below(r);
            let upto = tree.below(r + 1);
            counts.concordant += lower;
            counts.tied_risk += upto - lower;
            counts.discordant += inserted - upto;
            counts.usable += inserted;
        }
        for &i in group.iter().filter(|&&i| statuses[i]) {
            tree.add(rank(risk_scores[i]));
            inserted += 1;
        }
        start = end;
    }
    Ok(counts)
}

/// Harrell's C-index of `risk_scores` (higher = earlier failure).
pub fn c_index(times: &[f64], statuses: &[bool], risk_scores: &[f64]) -> Result<f64> {
    concordance_counts(times, statuses, risk_scores)?.c_index()
}

/// Kaplan–Meier product-limit estimate of the survival function.
pub fn kaplan_meier(times: &[f64], statuses: &[bool]) -> Result<StepFunction> {
    check_lengths(times, statuses, None)?;
    if times.is_empty() {
        return Err(Error::InvalidArgument(
            "Kaplan-Meier needs at least one record".into(),
        ));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut at_risk = times.len();
    let mut survival = 1.0;
    let (mut jump_times, mut values) = (Vec::new(), Vec::new());
    let mut start = 0;
    while start < order.len() {
        let t = times[order[start]];
        let mut end = start;
        while end < order.len() && times[order[end]] == t {
            end += 1;
        }
        let deaths = order[start..end].iter().filter(|&&i| statuses[i]).count();
        if deaths > 0 {
            survival *= 1.0 - deaths as f64 / at_risk as f64;
            jump_times.push(t);
            values.push(survival);
        }
        at_risk -= end - start;
        start = end;
    }
    StepFunction::new(jump_times, values, 1.0)
}

/// Percentile risk groups with a Kaplan–Meier curve for each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    /// Group of each subject, `0` = lowest risk.
    pub labels: Vec<usize>,
    pub group_sizes: Vec<usize>,
    pub curves: Vec<StepFunction>,
    pub warnings: Vec<String>,
}

/// 1-based ranks with ties sharing their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Splits subjects at percentile `cutpoints` of their risk score (e.g.
/// `[20, 80]` gives 0–20%, 20–80%, 80–100%) and estimates survival per group.
/// Empty groups are merged into their neighbour with a warning.
pub fn risk_stratify(
    risk_scores: &[f64],
    cutpoints: &[f64],
    times: &[f64],
    statuses: &[bool],
) -> Result<Stratification> {
    check_lengths(times, statuses, Some(risk_scores))?;
    if risk_scores.is_empty() {
        return Err(Error::InvalidArgument("no subjects to stratify".into()));
    }
    if cutpoints.iter().any(|c| !(*c > 0.0 && *c < 100.0))
        || cutpoints.windows(2).any(|w| !(w[0] < w[1]))
    {
        return Err(Error::InvalidArgument(format!(
            "cutpoints must be strictly increasing within (0, 100), got {cutpoints:?}"
        )));
    }
    let n = risk_scores.len() as f64;
    let raw: Vec<usize> = average_ranks(risk_scores)
        .into_iter()
        .map(|r| {
            let pct = 100.0 * r / n;
            cutpoints.iter().filter(|&&c| pct > c).count()
        })
        .collect();
    let mut sizes = vec![0usize; cutpoints.len() + 1];
    for &g in &raw {
        sizes[g] += 1;
    }
    let mut warnings = Vec::new();
    let mut relabel = vec![0usize; sizes.len()];
    let mut next = 0;
    for (g, &size) in sizes.iter().enumerate() {
        relabel[g] = next;
        if size > 0 {
            next += 1;
        } else {
            let msg = format!(
                "risk group {g} is empty (tied scores at a cutpoint); merged with its neighbour"
            );
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    let labels: Vec<usize> = raw.iter().map(|&g| relabel[g]).collect();
    let mut group_sizes = vec![0usize; next];
    for &g in &labels {
        group_sizes[g] += 1;
    }
    let curves = (0..next)
        .map(|g| {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == g).collect();
            let t: Vec<f64> = members.iter().map(|&i| times[i]).collect();
            let s: Vec<bool> = members.iter().map(|&i| statuses[i]).collect();
            kaplan_meier(&t, &s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Stratification {
        labels,
        group_sizes,
        curves,
        warnings,
    })
}

/// Long-format `group,t,survival` CSV, one block per group starting at `t = 0`.
pub fn write_km_csv<W: Write>(curves: &[StepFunction], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["group", "t", "survival"])?;
    for (g, curve) in curves.iter().enumerate() {
        w.write_record([g.to_string(), "0".into(), curve.initial().to_string()])?;
        for (t, v) in curve.times().iter().zip(curve.values()) {
            w.write_record([g.to_string(), t.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_index_hand_cases() {
        let t = [1.0, 2.0, 3.0];
        let s = [true; 3];
        assert_eq!(c_index(&t, &s, &[3.0, 2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(c_index(&t, &s, &[0.4; 3]).unwrap(), 0.5);
        assert!((c_index(&t, &s, &[3.0, 1.0, 2.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn c_index_without_usable_pairs() {
        assert!(matches!(
            c_index(&[1.0, 2.0], &[false, false], &[0.0, 1.0]),
            Err(Error::UndefinedMetric(_))
        ));
        // tied event times are not comparable
        assert!(c_index(&[1.0, 1.0], &[true, true], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn censored_at_event_time_is_comparable() {
        let counts = concordance_counts(&[2.0, 2.0], &[true, false], &[1.0, 0.0]).unwrap();
        assert_eq!(counts.usable, 1);
        assert_eq!(counts.concordant, 1);
    }

    #[test]
    fn kaplan_meier_hand_cases() {
        let km = kaplan_meier(&[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        assert_eq!(km.times(), &[1.0, 2.0, 3.0]);
        let expected = [2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (v, e) in km.values().iter().zip(expected) {
            assert!((v - e).abs() < 1e-15);
        }
        let km = kaplan_meier(&[1.0, 2.0], &[false, false]).unwrap();
        assert_eq!(km.eval(5.0), 1.0);
        let km = kaplan_meier(&[1.0, 2.0, 3.0], &[true, false, true]).unwrap();
        assert!((km.eval(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.eval(2.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.eval(3.0), 0.0);
        assert_eq!(km.eval(0.5), 1.0);
    }

    #[test]
    fn stratify_sizes() {
        let scores: Vec<f64> = (0..10).map(|i| i as f64 * 0.37).collect();
        let times: Vec<f64> = (1..=10).map(f64::from).collect();
        let s = risk_stratify(&scores, &[20.0, 80.0], &times, &[true; 10]).unwrap();
        assert_eq!(s.group_sizes, vec![2, 6, 2]);
        assert_eq!(s.labels, vec![0, 0, 1, 1, 1, 1, 1, 1, 2, 2]);
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn tied_scores_merge_empty_groups() {
        let s = risk_stratify(
            &[1.0; 6],
            &[20.0, 80.0],
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            &[true; 6],
        )
        .unwrap();
        assert_eq!(s.group_sizes, vec![6]);
        assert_eq!(s.warnings.len(), 2);
        assert!(risk_stratify(&[1.0], &[80.0, 20.0], &[1.0], &[true]).is_err());
    }

    #[test]
    fn step_function_csv_round_trip() {
        let f = StepFunction::new(vec![0.5, 1.25], vec![0.1, 0.7], 0.0).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert_eq!(
            std::str::from_utf8(&buf).unwrap(),
            "t,value\n0.5,0.1\n1.25,0.7\n"
        );
        assert_eq!(StepFunction::read_csv(buf.as_slice(), 0.0).unwrap(), f);
        assert!(StepFunction::new(vec![1.0, 1.0], vec![0.0, 0.0], 0.0).is_err());
    }
}
