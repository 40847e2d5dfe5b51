use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ResultRow;
use crate::bilevel::hex;
use crate::error::{Error, Result};

/// Git-style content hash: SHA-256 of `"blob <len>\0" ++ bytes`, hex.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

/// Mean and standard error of one metric over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryGroup {
    pub arm: String,
    pub setting: String,
    pub n: usize,
    /// Present for fixed-grid experiments; CV-selected runs pool over λ.
    pub lambda_rel: Option<f64>,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

/// The grid point with the best mean of the selection metric, per arm and
/// setting, with every metric's mean at that point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestLambda {
    pub arm: String,
    pub setting: String,
    pub selected_by: String,
    pub lambda_rel: f64,
    pub means: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Hash of the canonical JSON config, the only input of a run.
    pub inputs_hash: String,
    pub results_hash: String,
    pub rows: usize,
    pub notes: Vec<String>,
    pub groups: Vec<SummaryGroup>,
    pub best: Vec<BestLambda>,
}

/// Groups rows by arm, setting, `n`, metric and (optionally) `λ/λ_max`.
pub fn summarize(rows: &[ResultRow], by_lambda: bool) -> Vec<SummaryGroup> {
    type Key = (String, String, usize, Option<u64>, String);
    let mut acc: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for r in rows {
        let lam = by_lambda.then(|| r.lambda_rel.to_bits());
        acc.entry((r.arm.clone(), r.setting.clone(), r.n, lam, r.metric.clone()))
            .or_default()
            .push(r.value);
    }
    acc.into_iter()
        .map(|((arm, setting, n, lam, metric), v)| {
            let count = v.len();
            let mean = v.iter().sum::<f64>() / count as f64;
            let stderr = if count > 1 {
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
                (var / count as f64).sqrt()
            } else {
                0.0
            };
            SummaryGroup {
                arm,
                setting,
                n,
                lambda_rel: lam.map(f64::from_bits),
                metric,
                mean,
                stderr,
                count,
            }
        })
        .collect()
}

/// Best grid point per (arm, setting) by the mean of `metric`.
pub fn best_lambda(groups: &[SummaryGroup], metric: &str) -> Vec<BestLambda> {
    let mut by_arm: BTreeMap<(String, String), Vec<&SummaryGroup>> = BTreeMap::new();
    for g in groups.iter().filter(|g| g.lambda_rel.is_some()) {
        by_arm.entry((g.arm.clone(), g.setting.clone())).or_default().push(g);
    }
    let mut out = Vec::new();
    for ((arm, setting), gs) in by_arm {
        let Some(best) = gs
            .iter()
            .filter(|g| g.metric == metric)
            .max_by(|a, b| a.mean.total_cmp(&b.mean))
        else {
            continue;
        };
        let lam = best.lambda_rel.expect("filtered");
        let means = gs
            .iter()
            .filter(|g| g.lambda_rel == Some(lam))
            .map(|g| (g.metric.clone(), g.mean))
            .collect();
        out.push(BestLambda {
            arm,
            setting,
            selected_by: metric.into(),
            lambda_rel: lam,
            means,
        });
    }
    out
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn results_bytes(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv buffer: {e}")))
}

/// Writes `results.csv` and `summary.json` into `dir`.
pub fn emit(
    dir: &Path,
    experiment: &str,
    seed: u64,
    config: &impl Serialize,
    rows: &[ResultRow],
    by_lambda: bool,
    notes: Vec<String>,
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("results.csv");
    let bytes = results_bytes(rows)?;
    fs::write(&csv_path, &bytes).map_err(|e| Error::io(&csv_path, e))?;

    let config = serde_json::to_value(config)?;
    let groups = summarize(rows, by_lambda);
    let best = if by_lambda {
        let metric = if rows.iter().any(|r| r.metric == "mcc") { "mcc" } else { "accuracy" };
        best_lambda(&groups, metric)
    } else {
        Vec::new()
    };
    let summary = Summary {
        experiment: experiment.into(),
        seed,
        inputs_hash: blob_hash(serde_json::to_string(&config)?.as_bytes()),
        config,
        results_hash: blob_hash(&bytes),
        rows: rows.len(),
        notes,
        groups,
        best,
    };
    let json_path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    Ok((csv_path, json_path))
}
