//! CSV metric log: `step,stage,task_id,name,value`, one record per row.

use std::fmt::Write as _;

use crate::error::{EpiError, Result};
use crate::metrics::MetricRecord;

pub const CSV_HEADER: &str = "step,stage,task_id,name,value";

/// Renders records as CSV. Values use the shortest representation that
/// parses back to the same bits, so a log can be replayed exactly.
pub fn to_csv(records: &[MetricRecord]) -> Result<String> {
    let mut out = String::with_capacity(32 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        if r.name.contains([',', '\n', '"']) {
            return Err(EpiError::InvalidArgument(format!("metric name `{}` is not CSV-safe", r.name)));
        }
        let task = r.task_id.map(|t| t.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", r.step, r.stage, task, r.name, r.value).expect("writing to a String");
    }
    Ok(out)
}

pub fn from_csv(text: &str) -> Result<Vec<MetricRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(EpiError::Config(format!(
                "metric log header is {:?}, expected `{CSV_HEADER}`",
                other.unwrap_or("")
            )))
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = || EpiError::Config(format!("metric log line {}: `{line}`", i + 2));
            let cols: Vec<&str> = line.split(',').collect();
            let [step, stage, task, name, value] = cols[..] else {
                return Err(bad());
            };
            Ok(MetricRecord {
                step: step.parse().map_err(|_| bad())?,
                stage: stage.parse().map_err(|_| bad())?,
                task_id: if task.is_empty() {
                    None
                } else {
                    Some(task.parse().map_err(|_| bad())?)
                },
                name: name.to_string(),
                value: value.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
