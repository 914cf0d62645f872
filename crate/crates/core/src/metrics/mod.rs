//! Interference, forgetting, mask-drift and sensitivity diagnostics.

mod correlate;
mod drift;
mod forgetting;
mod interference;
mod perturb;

use serde::{Deserialize, Serialize};

pub use correlate::{correlate, pearson, spearman, Correlation};
pub use drift::{flip_rate, hamming, jaccard, quartile_buckets, task_pair_overlap};
pub use forgetting::{avg_norm_scores, forgetting_ratio, PerfLedger};
pub use interference::{cosine_interference, tgc};
pub use perturb::{
    model_perturbation_sensitivity, perturbation_sensitivity, sigma_for, stratified_indices, SigmaRule,
};

/// One row of a run's metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub stage: usize,
    pub task_id: Option<usize>,
    pub name: String,
    pub value: f64,
}
