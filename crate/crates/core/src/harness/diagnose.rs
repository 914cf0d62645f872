//! Checks the online sensitivity against the loss change that actual
//! coordinate perturbations cause on an earlier task's held-out data.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::Trainer;
use crate::epi::{generate_mask, normalize_layerwise, MaskStrategy, NORMALIZE_EPS};
use crate::error::{EpiError, Result};
use crate::metrics::{correlate, model_perturbation_sensitivity, stratified_indices, task_pair_overlap, Correlation};
use crate::model::loss_and_gradient;
use crate::rng::SeedTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub label: String,
    pub step: u64,
    pub n_indices: usize,
    /// Against the raw sensitivity S.
    pub raw: Option<Correlation>,
    /// Against the layer-normalised scores.
    pub normalized: Option<Correlation>,
    /// Why a correlation is missing, if one is.
    pub note: Option<String>,
    /// Mean perturbation loss change over the sampled coordinates.
    pub mean_delta_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOverlap {
    pub task_a: usize,
    pub task_b: usize,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub method: String,
    pub seed: u64,
    /// Task whose held-out set is the "old" data.
    pub old_task: usize,
    pub rows: Vec<CheckpointRow>,
    /// Overlap of per-task top-p% masks at the last checkpoint.
    pub task_pair_overlap: Vec<TaskOverlap>,
}

fn correlation_or_note(x: &[f64], y: &[f64], note: &mut Vec<String>, what: &str) -> Result<Option<Correlation>> {
    match correlate(x, y) {
        Ok(c) => Ok(Some(c)),
        Err(EpiError::Degenerate(m)) | Err(EpiError::InvalidArgument(m)) => {
            note.push(format!("{what}: {m}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Early / middle / late checkpoints at a third, two thirds and the end of
/// training.
pub fn diagnose(config: &RunConfig, seed: u64) -> Result<DiagnoseReport> {
    let trainer = Trainer::new(config, seed)?;
    let t = trainer.total_steps();
    let steps = [t.div_ceil(3), (2 * t).div_ceil(3), t];
    diagnose_at(trainer, &steps, &["early", "middle", "late"])
}

/// Runs `trainer` forward and evaluates the diagnostic at each of `steps`
/// (non-decreasing).
pub fn diagnose_at(mut trainer: Trainer, steps: &[u64], labels: &[&str]) -> Result<DiagnoseReport> {
    EpiError::check_len(steps.len(), labels.len())?;
    if steps.windows(2).any(|w| w[0] > w[1]) {
        return Err(EpiError::InvalidArgument("checkpoints must be non-decreasing".into()));
    }
    let seeds = SeedTree::new(trainer.seed());
    let dc = trainer.config().diagnose.clone();
    let old_task = trainer.stream().stages[0].tasks[0];
    let old_batch = trainer.stream().eval_sets[old_task].clone();
    let indices = stratified_indices(trainer.store().partition(), dc.per_group, &mut seeds.stream("diagnose"));
    let mut perturb_rng = seeds.stream("perturb");

    let mut rows = Vec::with_capacity(steps.len());
    for (&step, &label) in steps.iter().zip(labels) {
        trainer.run_until(step)?;
        let delta = model_perturbation_sensitivity(
            trainer.spec(),
            trainer.store(),
            &old_batch,
            &indices,
            dc.sigma,
            &mut perturb_rng,
            dc.trials,
        )?;
        let s = trainer.sensitivity().values();
        let raw: Vec<f64> = indices.iter().map(|&j| s[j]).collect();
        let norm_all = normalize_layerwise(s, trainer.store().partition(), NORMALIZE_EPS)?;
        let norm: Vec<f64> = indices.iter().map(|&j| norm_all[j]).collect();
        let mut notes = Vec::new();
        rows.push(CheckpointRow {
            label: label.to_string(),
            step: trainer.step(),
            n_indices: indices.len(),
            raw: correlation_or_note(&raw, &delta, &mut notes, "raw")?,
            normalized: correlation_or_note(&norm, &delta, &mut notes, "normalized")?,
            note: (!notes.is_empty()).then(|| notes.join("; ")),
            mean_delta_loss: delta.iter().sum::<f64>() / delta.len() as f64,
        });
    }

    let task_pair_overlap = per_task_overlap(&trainer)?;
    Ok(DiagnoseReport {
        method: trainer.config().method.name().to_string(),
        seed: trainer.seed(),
        old_task,
        rows,
        task_pair_overlap,
    })
}

/// Each task's top-p% set from its squared minibatch gradients on its
/// held-out data at the current parameters.
fn per_task_overlap(trainer: &Trainer) -> Result<Vec<TaskOverlap>> {
    let store = trainer.store();
    let d = store.dim();
    let bs = trainer.config().batch_size;
    let mut masks = Vec::new();
    for (task, eval) in trainer.stream().eval_sets.iter().enumerate() {
        let mut fisher = vec![0.0; d];
        let mut chunks = 0.0;
        for start in (0..eval.rows).step_by(bs) {
            let chunk = eval.slice_rows(start..(start + bs).min(eval.rows))?;
            let (_, g) = loss_and_gradient(trainer.spec(), store, &chunk)?;
            for (f, gi) in fisher.iter_mut().zip(&g) {
                *f += gi * gi;
            }
            chunks += 1.0;
        }
        fisher.iter_mut().for_each(|f| *f /= chunks);
        let scores = normalize_layerwise(&fisher, store.partition(), NORMALIZE_EPS)?;
        let mut unused = SeedTree::new(task as u64).stream("unused");
        masks.push(generate_mask(
            &scores,
            trainer.config().p,
            MaskStrategy::Epi,
            store.partition(),
            &mut unused,
            trainer.step(),
        )?);
    }
    Ok(task_pair_overlap(&masks)?
        .into_iter()
        .map(|(task_a, task_b, jaccard)| TaskOverlap { task_a, task_b, jaccard })
        .collect())
}
