use serde::{Deserialize, Serialize};

use crate::error::{EpiError, Result};

/// Per-task performance right after the task's own stage, and the latest
/// measurement since.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerfLedger {
    initial: Vec<Option<f64>>,
    latest: Vec<Option<f64>>,
}

impl PerfLedger {
    pub fn new(n_tasks: usize) -> Self {
        Self {
            initial: vec![None; n_tasks],
            latest: vec![None; n_tasks],
        }
    }

    /// Records the post-stage performance; a task's initial value is set once.
    pub fn record_initial(&mut self, task: usize, perf: f64) -> Result<()> {
        let slot = self
            .initial
            .get_mut(task)
            .ok_or_else(|| EpiError::InvalidArgument(format!("unknown task {task}")))?;
        if slot.is_some() {
            return Err(EpiError::InvalidArgument(format!("initial perf of task {task} already recorded")));
        }
        *slot = Some(perf);
        self.latest[task] = Some(perf);
        Ok(())
    }

    pub fn record_latest(&mut self, task: usize, perf: f64) -> Result<()> {
        *self
            .latest
            .get_mut(task)
            .ok_or_else(|| EpiError::InvalidArgument(format!("unknown task {task}")))? = Some(perf);
        Ok(())
    }

    pub fn initial(&self, task: usize) -> Option<f64> {
        self.initial.get(task).copied().flatten()
    }

    pub fn latest(&self, task: usize) -> Option<f64> {
        self.latest.get(task).copied().flatten()
    }

    pub fn n_tasks(&self) -> usize {
        self.initial.len()
    }
}

/// `(initial − latest) / initial × 100`; negative values mean backward transfer.
pub fn forgetting_ratio(ledger: &PerfLedger, task: usize) -> Result<f64> {
    let initial = ledger
        .initial(task)
        .ok_or_else(|| EpiError::InvalidArgument(format!("no initial perf for task {task}")))?;
    if initial == 0.0 {
        return Err(EpiError::Degenerate(format!("initial perf of task {task} is zero")));
    }
    let latest = ledger.latest(task).unwrap_or(initial);
    Ok((initial - latest) / initial * 100.0)
}

/// Min-max rescales each task column to [0, 10] across the compared methods
/// and averages per method. A column where all methods tie scores 10.
pub fn avg_norm_scores(perf: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = perf.first() else {
        return Err(EpiError::Empty("no methods to compare".into()));
    };
    let n_tasks = first.len();
    if n_tasks == 0 || perf.iter().any(|r| r.len() != n_tasks) {
        return Err(EpiError::ShapeMismatch("ragged performance table".into()));
    }
    let mut scores = vec![0.0; perf.len()];
    for t in 0..n_tasks {
        let (lo, hi) = perf
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[t]), hi.max(r[t])));
        for (s, row) in scores.iter_mut().zip(perf) {
            *s += if hi > lo { 10.0 * (row[t] - lo) / (hi - lo) } else { 10.0 };
        }
    }
    Ok(scores.into_iter().map(|s| s / n_tasks as f64).collect())
}
