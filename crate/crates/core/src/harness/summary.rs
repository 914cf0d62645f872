//! Run summaries, computed from the metric log alone so a persisted log
//! replays to the identical summary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::log::from_csv;
use crate::error::{EpiError, Result};
use crate::metrics::{forgetting_ratio, MetricRecord, PerfLedger};

/// Progress fractions at which drift is reported.
pub const DRIFT_CHECKPOINTS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub progress: f64,
    /// Step of the latest mask at or before this point.
    pub step: Option<u64>,
    /// Jaccard overlap of that mask with the first non-empty mask.
    pub jaccard: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRate {
    pub bucket: String,
    /// Mean percentage of bucket bits flipped between consecutive refreshes.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub total_steps: u64,
    pub final_perf: Vec<f64>,
    /// Per-task forgetting ratio (percent); tasks trained in the final stage
    /// score 0 by construction.
    pub forgetting: Vec<f64>,
    /// Mean forgetting over tasks that were followed by a later stage.
    pub mean_forgetting: Option<f64>,
    pub mean_final_perf: f64,
    /// Mean TGC over every logged conflicting-pair evaluation.
    pub avg_tgc: Option<f64>,
    pub drift: Vec<DriftPoint>,
    pub flip_rates: Vec<FlipRate>,
    pub refresh_count: usize,
    /// Not recoverable from the log; excluded from replay comparisons.
    pub wall_time_secs: f64,
    pub config: RunConfig,
}

impl RunSummary {
    /// Equality on every field derivable from the log.
    pub fn replay_eq(&self, other: &RunSummary) -> bool {
        let mut a = self.clone();
        a.wall_time_secs = other.wall_time_secs;
        a == *other
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Derives the summary from a run's records. `config` is the per-seed echo
/// (a single seed).
pub fn summarize(records: &[MetricRecord], config: &RunConfig, wall_time_secs: f64) -> Result<RunSummary> {
    let n = config.suite.n_tasks;
    let seed = *config
        .seeds
        .first()
        .ok_or_else(|| EpiError::Config("summary config has no seed".into()))?;
    let total_steps = records
        .iter()
        .filter(|r| r.name == "loss")
        .map(|r| r.step)
        .max()
        .unwrap_or(0);
    let last_stage = records.iter().map(|r| r.stage).max().unwrap_or(0);

    let mut ledger = PerfLedger::new(n);
    let mut owning = vec![None; n];
    let mut final_perf = vec![f64::NAN; n];
    for r in records {
        let Some(task) = r.task_id else { continue };
        match r.name.as_str() {
            "perf_initial" => {
                ledger.record_initial(task, r.value)?;
                owning[task] = Some(r.stage);
            }
            "perf" => {
                ledger.record_latest(task, r.value)?;
                final_perf[task] = r.value;
            }
            _ => {}
        }
    }
    let mut forgetting = Vec::with_capacity(n);
    let mut earlier = Vec::new();
    for task in 0..n {
        let fr = forgetting_ratio(&ledger, task)?;
        forgetting.push(fr);
        if owning[task].is_some_and(|s| s < last_stage) {
            earlier.push(fr);
        }
    }

    let avg_tgc = mean(records.iter().filter(|r| r.name.starts_with("tgc:")).map(|r| r.value));

    let jaccard: Vec<&MetricRecord> = records.iter().filter(|r| r.name == "jaccard_initial").collect();
    let drift = DRIFT_CHECKPOINTS
        .iter()
        .map(|&q| {
            let limit = (q * total_steps as f64).floor() as u64;
            let hit = jaccard.iter().rev().find(|r| r.step <= limit);
            DriftPoint {
                progress: q,
                step: hit.map(|r| r.step),
                jaccard: hit.map(|r| r.value),
            }
        })
        .collect();

    let mut buckets: Vec<(String, Vec<f64>)> = Vec::new();
    for r in records {
        if let Some(label) = r.name.strip_prefix("flip:") {
            match buckets.iter_mut().find(|(b, _)| b == label) {
                Some((_, v)) => v.push(r.value),
                None => buckets.push((label.to_string(), vec![r.value])),
            }
        }
    }
    let flip_rates = buckets
        .into_iter()
        .map(|(bucket, v)| FlipRate {
            bucket,
            percent: mean(v).expect("bucket has a value"),
        })
        .collect();

    Ok(RunSummary {
        method: config.method.name().to_string(),
        seed,
        total_steps,
        mean_final_perf: mean(final_perf.iter().copied()).unwrap_or(f64::NAN),
        final_perf,
        forgetting,
        mean_forgetting: mean(earlier),
        avg_tgc,
        drift,
        flip_rates,
        refresh_count: records.iter().filter(|r| r.name == "mask_locked").count(),
        wall_time_secs,
        config: config.clone(),
    })
}

/// Recomputes a persisted run's summary from its `metrics.csv` and
/// `config.json`.
pub fn replay_summary(run_dir: &Path) -> Result<RunSummary> {
    let read = |name: &str| {
        let path = run_dir.join(name);
        std::fs::read_to_string(&path).map_err(|e| EpiError::io(path, e))
    };
    let records = from_csv(&read("metrics.csv")?)?;
    let config = RunConfig::from_json(&read("config.json")?)?;
    summarize(&records, &config, 0.0)
}
