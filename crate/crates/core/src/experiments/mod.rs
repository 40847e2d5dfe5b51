//! Desk-scale experiments and their CSV/JSON outputs.

mod disent;
mod emit;
mod fewshot;
mod generalization;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use disent::{run_e2, run_e3, BilevelExpConfig};
pub use emit::{blob_hash, emit, summarize, write_results_csv, Summary, SummaryGroup};
pub use fewshot::{run_e4, FewShotConfig};
pub use generalization::{run_e1, GeneralizationConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExperimentId {
    #[serde(rename = "E1_generalization")]
    E1,
    #[serde(rename = "E2_bilevel")]
    E2,
    #[serde(rename = "E3_violation")]
    E3,
    #[serde(rename = "E4_svm_fewshot")]
    E4,
    #[serde(rename = "unit_oracles")]
    UnitOracles,
}

impl ExperimentId {
    pub fn short(&self) -> &'static str {
        match self {
            ExperimentId::E1 => "E1",
            ExperimentId::E2 => "E2",
            ExperimentId::E3 => "E3",
            ExperimentId::E4 => "E4",
            ExperimentId::UnitOracles => "unit_oracles",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let id = match s.to_ascii_lowercase().as_str() {
            "e1" | "e1_generalization" => ExperimentId::E1,
            "e2" | "e2_bilevel" => ExperimentId::E2,
            "e3" | "e3_violation" => ExperimentId::E3,
            "e4" | "e4_svm_fewshot" => ExperimentId::E4,
            "unit_oracles" | "oracles" => ExperimentId::UnitOracles,
            _ => return Err(Error::InvalidArgument(format!("unknown experiment {s:?}"))),
        };
        Ok(id)
    }
}

/// Settings for every experiment; each run reads its own section. Missing
/// JSON fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub e1: GeneralizationConfig,
    pub e2: BilevelExpConfig,
    pub e3: BilevelExpConfig,
    pub e4: FewShotConfig,
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        ExperimentConfig {
            seed,
            e1: GeneralizationConfig::default(),
            e2: BilevelExpConfig::default(),
            e3: BilevelExpConfig::violation_default(),
            e4: FewShotConfig::default(),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::new(0)
    }
}

/// One measured value. `setting` names the sweep point (`l/m=0.05`,
/// `rho=0.9`, ...); `lambda_rel` is `λ/λ_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub arm: String,
    pub setting: String,
    pub seed: u64,
    pub n: usize,
    pub lambda: f64,
    pub lambda_rel: f64,
    pub metric: String,
    pub value: f64,
}

impl ResultRow {
    fn sort_key(a: &ResultRow, b: &ResultRow) -> std::cmp::Ordering {
        a.experiment
            .cmp(&b.experiment)
            .then_with(|| a.arm.cmp(&b.arm))
            .then_with(|| a.setting.cmp(&b.setting))
            .then_with(|| a.seed.cmp(&b.seed))
            .then_with(|| a.n.cmp(&b.n))
            .then_with(|| a.lambda_rel.total_cmp(&b.lambda_rel))
            .then_with(|| a.lambda.total_cmp(&b.lambda))
            .then_with(|| a.metric.cmp(&b.metric))
    }
}

/// Sorts rows into the canonical emission order and checks they are finite.
pub fn finalize_rows(mut rows: Vec<ResultRow>) -> Result<Vec<ResultRow>> {
    if let Some(r) = rows.iter().find(|r| !(r.value.is_finite() && r.lambda.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "non-finite result: {} {} {} {}",
            r.arm, r.setting, r.metric, r.value
        )));
    }
    rows.sort_by(ResultRow::sort_key);
    Ok(rows)
}

/// Runs one experiment and returns its sorted rows.
pub fn run(id: ExperimentId, cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let rows = match id {
        ExperimentId::E1 => run_e1(&cfg.e1, cfg.seed)?,
        ExperimentId::E2 => run_e2(&cfg.e2, cfg.seed)?,
        ExperimentId::E3 => run_e3(&cfg.e3, cfg.seed)?,
        ExperimentId::E4 => run_e4(&cfg.e4, cfg.seed)?,
        ExperimentId::UnitOracles => crate::selftest::run_checks(cfg.seed)
            .into_iter()
            .map(|c| ResultRow {
                experiment: "unit_oracles".into(),
                arm: c.name,
                setting: String::new(),
                seed: cfg.seed,
                n: 0,
                lambda: 0.0,
                lambda_rel: 0.0,
                metric: "passed".into(),
                value: if c.passed { 1.0 } else { 0.0 },
            })
            .collect(),
    };
    finalize_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_parse() {
        assert_eq!("E1".parse::<ExperimentId>().unwrap(), ExperimentId::E1);
        assert_eq!("e4_svm_fewshot".parse::<ExperimentId>().unwrap(), ExperimentId::E4);
        assert!("E9".parse::<ExperimentId>().is_err());
    }

    #[test]
    fn partial_config_json_takes_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"seed": 3, "e1": {"seeds": 2}}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.e1.seeds, 2);
        assert_eq!(cfg.e1.m, GeneralizationConfig::default().m);
    }

    #[test]
    fn non_finite_rows_rejected() {
        let row = ResultRow {
            experiment: "E1".into(),
            arm: "a".into(),
            setting: String::new(),
            seed: 0,
            n: 1,
            lambda: 0.0,
            lambda_rel: 0.0,
            metric: "r2".into(),
            value: f64::NAN,
        };
        assert!(finalize_rows(vec![row]).is_err());
    }
}
