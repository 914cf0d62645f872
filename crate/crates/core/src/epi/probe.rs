//! Static-isolation baseline: a one-off probe fine-tune per task from the
//! shared initialisation, merged into a single frozen mask.

use super::mask::{IsolationMask, MaskStrategy};
use super::select::{target_count, top_k};
use super::sensitivity::{normalize_layerwise, SensitivityState, NORMALIZE_EPS};
use crate::error::{EpiError, Result};
use crate::model::{loss_and_gradient, ModelSpec};
use crate::optim::{apply_masked_update, AdamW, AdamWConfig, LrSchedule, ScheduleShape};
use crate::params::ParamStore;
use crate::rng::SeedTree;
use crate::tasks::{sample_batch, TaskSpec};

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub p: f64,
    pub layer_norm: bool,
    pub optimizer: AdamWConfig,
    pub warmup_fraction: f64,
    pub schedule: ScheduleShape,
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    /// The merged, frozen mask.
    pub mask: IsolationMask,
    /// Each task's own top-p% mask.
    pub per_task: Vec<IsolationMask>,
    /// Each task's selection scores at probe end.
    pub per_task_scores: Vec<Vec<f64>>,
}

/// Probes every task, takes the per-task top-k sets, and truncates their
/// union back to k by the best per-coordinate score across tasks.
pub fn probe_static_mask(
    spec: &ModelSpec,
    init: &ParamStore,
    tasks: &[TaskSpec],
    config: &ProbeConfig,
    seeds: &SeedTree,
) -> Result<ProbeOutcome> {
    if tasks.is_empty() {
        return Err(EpiError::Empty("probe task list".into()));
    }
    if config.steps == 0 {
        return Err(EpiError::InvalidArgument("probe needs at least one step".into()));
    }
    let d = init.dim();
    let k = target_count(config.p, d)?;
    if k == 0 {
        return Err(EpiError::InvalidArgument(format!("ratio {} selects nothing out of {d}", config.p)));
    }
    let schedule = LrSchedule::new(config.optimizer.lr, config.warmup_fraction, config.steps, config.schedule)?;
    let no_mask = super::BitMask::zeros(d);

    let mut per_task = Vec::with_capacity(tasks.len());
    let mut per_task_scores = Vec::with_capacity(tasks.len());
    for task in tasks {
        let mut store = init.clone();
        let mut opt = AdamW::new(config.optimizer, d)?;
        let mut sens = SensitivityState::new(d, config.beta)?;
        let mut rng = seeds.indexed("probe", task.id as u64);
        for step in 1..=config.steps {
            let batch = sample_batch(task, &mut rng, config.batch_size)?;
            let (_, grad) = loss_and_gradient(spec, &store, &batch)?;
            sens.accumulate(&grad)?;
            let delta = opt.delta(&grad, store.values(), schedule.lr_at(step))?;
            apply_masked_update(&mut store, &delta, &no_mask)?;
        }
        let scores = if config.layer_norm {
            normalize_layerwise(sens.values(), init.partition(), NORMALIZE_EPS)?
        } else {
            sens.values().to_vec()
        };
        per_task.push(IsolationMask {
            bits: top_k(&scores, k),
            step: 0,
            ratio: config.p,
            strategy: MaskStrategy::Static,
        });
        per_task_scores.push(scores);
    }

    let mask = merge_probe_masks(&per_task, &per_task_scores, k)?;
    Ok(ProbeOutcome {
        mask: IsolationMask {
            bits: mask,
            step: 0,
            ratio: config.p,
            strategy: MaskStrategy::Static,
        },
        per_task,
        per_task_scores,
    })
}

/// Union of the per-task sets, truncated to the `k` members with the highest
/// max-over-tasks score (lower index on ties).
pub(crate) fn merge_probe_masks(
    per_task: &[IsolationMask],
    scores: &[Vec<f64>],
    k: usize,
) -> Result<super::BitMask> {
    let d = per_task[0].dim();
    let mut union = super::BitMask::zeros(d);
    for m in per_task {
        union = union.or(&m.bits)?;
    }
    let mut combined = vec![f64::NEG_INFINITY; d];
    for j in union.iter_ones() {
        combined[j] = scores.iter().map(|s| s[j]).fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(top_k(&combined, k))
}
