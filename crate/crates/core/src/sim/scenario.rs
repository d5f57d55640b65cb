use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    /// Six observed covariates, linear truth.
    I,
    /// Five observed covariates; truth adds `Z1*Z5` and two hidden covariates.
    II,
}

impl Setting {
    pub fn observed_covariates(self) -> usize {
        match self {
            Setting::I => 6,
            Setting::II => 5,
        }
    }

    /// Length of the true coefficient vector.
    pub fn truth_len(self) -> usize {
        match self {
            Setting::I => 6,
            Setting::II => 8,
        }
    }

    pub fn default_beta(self) -> Vec<f64> {
        match self {
            Setting::I => vec![0.3, -0.3, 0.3, -0.3, 0.3, -0.3],
            Setting::II => vec![0.3, -0.3, 0.3, -0.3, -0.3, 0.5, 1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Cox,
    Boosted,
    Null,
}

/// How one external model is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSpec {
    /// Probability of the latent indicator in the external population.
    pub p_l: f64,
    /// Observed covariates used by the model, numbered from 1.
    pub covariates: Vec<usize>,
    pub family: ModelFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub name: String,
    pub setting: Setting,
    pub n_internal: usize,
    /// Target censoring proportion; `0` disables censoring.
    pub censoring_target: f64,
    pub p_l_internal: f64,
    pub beta_true: Vec<f64>,
    pub external_specs: Vec<ExternalSpec>,
    pub n_external: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_internal < 2 || self.n_test < 2 {
            return bad("n_internal and n_test must be at least 2".into());
        }
        if !(0.0..=0.95).contains(&self.censoring_target) {
            return bad(format!(
                "censoring target {} outside [0, 0.95]",
                self.censoring_target
            ));
        }
        if !(0.0..=1.0).contains(&self.p_l_internal) {
            return bad(format!("p_l_internal {} outside [0, 1]", self.p_l_internal));
        }
        if self.beta_true.len() != self.setting.truth_len()
            || self.beta_true.iter().any(|b| !b.is_finite())
        {
            return bad(format!(
                "setting {:?} needs {} finite true coefficients",
                self.setting,
                self.setting.truth_len()
            ));
        }
        let p = self.setting.observed_covariates();
        for spec in &self.external_specs {
            if !(0.0..=1.0).contains(&spec.p_l) {
                return bad(format!("external p_l {} outside [0, 1]", spec.p_l));
            }
            if spec.covariates.iter().any(|&c| c == 0 || c > p) {
                return bad(format!(
                    "external covariates {:?} not within 1..={p}",
                    spec.covariates
                ));
            }
            if spec.family != ModelFamily::Null && spec.covariates.is_empty() {
                return bad("a fitted external model needs at least one covariate".into());
            }
        }
        if !self.external_specs.is_empty() && self.n_external < 10 {
            return bad("n_external must be at least 10".into());
        }
        Ok(())
    }
}

fn spec(p_l: f64, covariates: &[usize], family: ModelFamily) -> ExternalSpec {
    ExternalSpec {
        p_l,
        covariates: covariates.to_vec(),
        family,
    }
}

/// External settings by label (`E1` .. `E6`).
pub fn external_setting(label: &str) -> Option<Vec<ExternalSpec>> {
    use ModelFamily::*;
    Some(match label {
        "E1" => vec![spec(1.0, &[1, 2, 3, 4, 5, 6], Cox)],
        "E2" => vec![spec(0.5, &[1, 3, 5, 6], Cox)],
        "E3" => vec![spec(0.0, &[1, 5], Cox)],
        "E4" => vec![
            spec(1.0, &[1, 2, 3, 4, 5], Boosted),
            spec(1.0, &[1, 2, 3, 4, 5], Cox),
        ],
        "E5" => vec![spec(0.25, &[1, 3, 5], Boosted), spec(0.25, &[2, 4], Cox)],
        "E6" => vec![spec(0.0, &[2, 4], Boosted), spec(0.0, &[], Null)],
        _ => return None,
    })
}

fn base(
    name: String,
    setting: Setting,
    n: usize,
    censoring: f64,
    externals: Vec<ExternalSpec>,
) -> SimScenario {
    SimScenario {
        name,
        setting,
        n_internal: n,
        censoring_target: censoring,
        p_l_internal: 1.0,
        beta_true: setting.default_beta(),
        external_specs: externals,
        n_external: 10_000,
        n_test: 1000,
        seed: 1,
    }
}

/// Every named cell.
///
/// * `n{50,100}_c{30,60}_E{1,2,3}`: Setting I, sample size and censoring percent.
/// * `n50_c30_E{4,5,6}`: Setting II with two external models.
/// * `n{50,75,100}_e40_{fair,poor}`, `n50_e{60,80}_{fair,poor}`: Setting II
///   with one Cox external model on `(Z1, Z3, Z5)`, by event percent.
pub fn cell_names() -> Vec<String> {
    let mut names = Vec::new();
    for n in [50, 100] {
        for c in [30, 60] {
            for e in 1..=3 {
                names.push(format!("n{n}_c{c}_E{e}"));
            }
        }
    }
    for e in 4..=6 {
        names.push(format!("n50_c30_E{e}"));
    }
    for (n, rate) in [(50, 40), (75, 40), (100, 40), (50, 60), (50, 80)] {
        for q in ["fair", "poor"] {
            names.push(format!("n{n}_e{rate}_{q}"));
        }
    }
    names
}

/// Scenario for a named cell with the given seed.
pub fn cell(name: &str, seed: u64) -> Result<SimScenario> {
    if !cell_names().iter().any(|c| c == name) {
        return Err(Error::InvalidArgument(format!(
            "unknown cell '{name}'; valid cells: {}",
            cell_names().join(", ")
        )));
    }
    let parts: Vec<&str> = name.split('_').collect();
    let n: usize = parts[0][1..].parse().expect("validated name");
    let mut scenario = if parts[1].starts_with('c') {
        let censoring = parts[1][1..].parse::<f64>().expect("validated name") / 100.0;
        let label = parts[2];
        let setting = if matches!(label, "E1" | "E2" | "E3") {
            Setting::I
        } else {
            Setting::II
        };
        base(
            name.into(),
            setting,
            n,
            censoring,
            external_setting(label).expect("validated name"),
        )
    } else {
        let events = parts[1][1..].parse::<f64>().expect("validated name") / 100.0;
        let p_l = if parts[2] == "fair" { 1.0 } else { 0.0 };
        base(
            name.into(),
            Setting::II,
            n,
            1.0 - events,
            vec![spec(p_l, &[1, 3, 5], ModelFamily::Cox)],
        )
    };
    scenario.seed = seed;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_cell_builds_and_validates() {
        for name in cell_names() {
            let s = cell(&name, 3).unwrap();
            s.validate().unwrap();
            assert_eq!(s.name, name);
        }
        assert_eq!(cell_names().len(), 25);
    }

    #[test]
    fn cell_parameters() {
        let s = cell("n100_c30_E3", 1).unwrap();
        assert_eq!(
            (s.n_internal, s.censoring_target, s.setting),
            (100, 0.3, Setting::I)
        );
        assert_eq!(s.external_specs[0].covariates, vec![1, 5]);
        let s = cell("n50_e80_poor", 1).unwrap();
        assert!((s.censoring_target - 0.2).abs() < 1e-12);
        assert_eq!(s.external_specs[0].p_l, 0.0);
        let err = cell("n20_c10_E1", 1).unwrap_err().to_string();
        assert!(err.contains("n50_c60_E1"));
    }
}
