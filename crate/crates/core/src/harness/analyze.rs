//! Drift report over a run directory's mask snapshots.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::snapshot;
use crate::epi::diff_masks;
use crate::error::{EpiError, Result};
use crate::metrics::{flip_rate, hamming, jaccard, quartile_buckets};
use crate::params::Partition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub step: u64,
    pub popcount: usize,
    /// Overlap with the first snapshot; `None` when both are empty.
    pub jaccard_initial: Option<f64>,
    /// Hamming distance to the previous snapshot (absent for the first).
    pub hamming_prev: Option<usize>,
    pub locked: Option<usize>,
    pub freed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub rows: Vec<SnapshotRow>,
    /// `(bucket label, mean flip percent)` over consecutive snapshots.
    pub flip_rates: Vec<(String, f64)>,
}

/// Reads `<dir>/snapshots/*.epim` (or `<dir>/*.epim` if there is no
/// `snapshots` subdirectory) and `<dir>/partition.json` when present; without
/// a partition the whole vector is one bucket.
pub fn analyze_snapshots(dir: &Path) -> Result<DriftReport> {
    let snap_dir = dir.join("snapshots");
    let snaps = snapshot::read_dir(if snap_dir.is_dir() { &snap_dir } else { dir })?;
    if snaps.len() < 2 {
        return Err(EpiError::InvalidArgument(format!(
            "{} holds {} snapshot(s); at least 2 are needed",
            dir.display(),
            snaps.len()
        )));
    }
    let masks: Vec<_> = snaps.into_iter().map(|(_, m)| m).collect();
    let d = masks[0].dim();
    if let Some(m) = masks.iter().find(|m| m.dim() != d) {
        return Err(EpiError::LengthMismatch {
            expected: d,
            actual: m.dim(),
        });
    }
    let partition_path = dir.join("partition.json");
    let buckets = if partition_path.is_file() {
        let text = std::fs::read_to_string(&partition_path).map_err(|e| EpiError::io(&partition_path, e))?;
        let partition: Partition = serde_json::from_str(&text)?;
        partition.validate()?;
        EpiError::check_len(d, partition.dim())?;
        quartile_buckets(&partition)
    } else {
        vec![("all".to_string(), 0..d)]
    };

    let mut rows = Vec::with_capacity(masks.len());
    for (i, m) in masks.iter().enumerate() {
        let (hamming_prev, locked, freed) = if i == 0 {
            (None, None, None)
        } else {
            let t = diff_masks(&masks[i - 1], m)?;
            (
                Some(hamming(&masks[i - 1].bits, &m.bits)?),
                Some(t.locked.len()),
                Some(t.freed.len()),
            )
        };
        rows.push(SnapshotRow {
            step: m.step,
            popcount: m.popcount(),
            jaccard_initial: jaccard(&masks[0].bits, &m.bits).ok(),
            hamming_prev,
            locked,
            freed,
        });
    }
    let flip_rates = buckets
        .into_iter()
        .map(|(label, range)| Ok((label, flip_rate(&masks, range)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DriftReport { rows, flip_rates })
}

impl DriftReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let mut out = String::from("step,popcount,jaccard_initial,hamming_prev,locked,freed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step,
                r.popcount,
                opt(r.jaccard_initial.map(|v| v.to_string())),
                opt(r.hamming_prev.map(|v| v.to_string())),
                opt(r.locked.map(|v| v.to_string())),
                opt(r.freed.map(|v| v.to_string())),
            ));
        }
        out
    }
}
