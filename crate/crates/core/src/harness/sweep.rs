//! One-axis hyper-parameter sweeps, aggregated over seeds.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{apply_override, RunConfig};
use super::summary::RunSummary;
use super::train::{train_run, write_run};
use crate::error::{EpiError, Result};
use crate::metrics::avg_norm_scores;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Protected fraction.
    P,
    /// Refresh interval.
    H,
    /// EMA factor.
    Beta,
}

impl SweepAxis {
    fn key(self) -> &'static str {
        match self {
            SweepAxis::P => "p",
            SweepAxis::H => "refresh_interval",
            SweepAxis::Beta => "beta",
        }
    }

    fn name(self) -> &'static str {
        match self {
            SweepAxis::P => "p",
            SweepAxis::H => "H",
            SweepAxis::Beta => "beta",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = EpiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(SweepAxis::P),
            "H" | "h" => Ok(SweepAxis::H),
            "beta" => Ok(SweepAxis::Beta),
            other => Err(EpiError::Config(format!("unknown sweep axis `{other}` (p, H or beta)"))),
        }
    }
}

/// Seed-averaged results for one axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seeds: Vec<u64>,
    pub mean_final_perf: Vec<f64>,
    pub mean_forgetting: Option<f64>,
    pub avg_tgc: Option<f64>,
    /// 0–10 min-max score across the rows of this table.
    pub avg_norm_score: f64,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

fn value_config(base: &RunConfig, axis: SweepAxis, value: f64) -> Result<RunConfig> {
    let mut v = serde_json::to_value(base)?;
    let new = match axis {
        SweepAxis::H => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(EpiError::Config(format!("H = {value} is not a positive integer")));
            }
            Value::from(value as u64)
        }
        _ => Value::from(value),
    };
    apply_override(&mut v, &format!("{}={new}", axis.key()))?;
    RunConfig::from_value(v)
}

/// One run per (value, seed), executed in parallel; when `out` is given each
/// run is written to `<out>/<axis>_<value>/seed_<n>`.
pub fn sweep(config: &RunConfig, axis: SweepAxis, values: &[f64], out: Option<&Path>) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(EpiError::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| value_config(config, axis, v))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| config.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let run = train_run(&configs[i], seed)?;
            if let Some(root) = out {
                let dir = root.join(format!("{}_{}", axis.name(), values[i])).join(format!("seed_{seed}"));
                write_run(&dir, &run)?;
            }
            Ok((i, run.summary))
        })
        .collect::<Result<Vec<_>>>()?;

    let n_tasks = config.suite.n_tasks;
    let mut rows: Vec<SweepRow> = values
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let mine: Vec<RunSummary> = runs.iter().filter(|(j, _)| *j == i).map(|(_, s)| s.clone()).collect();
            let k = mine.len() as f64;
            let mean_final_perf = (0..n_tasks)
                .map(|t| mine.iter().map(|s| s.final_perf[t]).sum::<f64>() / k)
                .collect();
            let avg = |f: &dyn Fn(&RunSummary) -> Option<f64>| {
                let v: Vec<f64> = mine.iter().filter_map(f).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            SweepRow {
                value,
                seeds: mine.iter().map(|s| s.seed).collect(),
                mean_final_perf,
                mean_forgetting: avg(&|s| s.mean_forgetting),
                avg_tgc: avg(&|s| s.avg_tgc),
                avg_norm_score: 0.0,
                runs: mine,
            }
        })
        .collect();
    let table: Vec<Vec<f64>> = rows.iter().map(|r| r.mean_final_perf.clone()).collect();
    for (row, score) in rows.iter_mut().zip(avg_norm_scores(&table)?) {
        row.avg_norm_score = score;
    }
    Ok(SweepTable { axis, rows })
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = format!(
            "{},mean_final_perf,mean_forgetting,avg_tgc,avg_norm_score,n_seeds\n",
            self.axis.name()
        );
        for r in &self.rows {
            let perf = r.mean_final_perf.iter().sum::<f64>() / r.mean_final_perf.len() as f64;
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.value,
                perf,
                fmt(r.mean_forgetting),
                fmt(r.avg_tgc),
                r.avg_norm_score,
                r.seeds.len()
            ));
        }
        out
    }
}
