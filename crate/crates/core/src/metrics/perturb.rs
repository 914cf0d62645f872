use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EpiError, Result};
use crate::model::{loss_at, Batch, ModelSpec};
use crate::params::{ParamStore, Partition};
use crate::rng::Rng;

/// How the perturbation scale of coordinate `j` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SigmaRule {
    /// `max(scale × RMS(group of j), floor)`.
    GroupRms { scale: f64, floor: f64 },
    /// The same σ everywhere.
    Fixed { sigma: f64 },
}

impl Default for SigmaRule {
    fn default() -> Self {
        SigmaRule::GroupRms {
            scale: 1e-3,
            floor: 1e-6,
        }
    }
}

/// σ for every index in `indices`.
pub fn sigma_for(rule: SigmaRule, store: &ParamStore, indices: &[usize]) -> Result<Vec<f64>> {
    let partition = store.partition();
    let rms: Vec<f64> = partition
        .groups()
        .iter()
        .map(|g| {
            let v = &store.values()[g.range()];
            (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
        })
        .collect();
    indices
        .iter()
        .map(|&j| {
            let g = partition
                .group_of(j)
                .ok_or_else(|| EpiError::InvalidArgument(format!("index {j} out of range")))?;
            Ok(match rule {
                SigmaRule::GroupRms { scale, floor } => (scale * rms[g]).max(floor),
                SigmaRule::Fixed { sigma } => sigma,
            })
        })
        .collect()
}

/// Equal-count sample per group (all of a group when it is smaller than
/// `per_group`), sorted ascending.
pub fn stratified_indices(partition: &Partition, per_group: usize, rng: &mut Rng) -> Vec<usize> {
    let mut out = Vec::new();
    for g in partition.groups() {
        let n = per_group.min(g.len);
        let mut picked = sample(rng, g.len, n).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| g.offset + i));
    }
    out
}

/// Mean loss change from perturbing each sampled coordinate alone by
/// `N(0, σ_j²)`. Draws come in antithetic pairs `±z`, which removes the
/// first-order term's sampling noise without biasing the expectation; each
/// of the `trials` counts as one pair. `params` is restored bit-exactly
/// after every evaluation.
pub fn perturbation_sensitivity<F>(
    params: &mut [f64],
    indices: &[usize],
    sigmas: &[f64],
    rng: &mut Rng,
    trials: usize,
    mut loss: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    EpiError::check_len(indices.len(), sigmas.len())?;
    if trials == 0 {
        return Err(EpiError::InvalidArgument("trials must be at least 1".into()));
    }
    if let Some(&j) = indices.iter().find(|&&j| j >= params.len()) {
        return Err(EpiError::InvalidArgument(format!("index {j} out of range")));
    }
    let finite = |l: f64| {
        if l.is_finite() {
            Ok(l)
        } else {
            Err(EpiError::NonFinite("perturbed loss".into()))
        }
    };
    let base = finite(loss(params)?)?;
    let mut out = Vec::with_capacity(indices.len());
    for (&j, &sigma) in indices.iter().zip(sigmas) {
        let original = params[j];
        let mut acc = 0.0;
        for _ in 0..trials {
            let z: f64 = StandardNormal.sample(rng);
            let mut pair = 0.0;
            for sign in [1.0, -1.0] {
                params[j] = original + sign * sigma * z;
                let l = loss(params);
                params[j] = original;
                pair += finite(l?)? - base;
            }
            acc += pair / 2.0;
        }
        out.push(acc / trials as f64);
    }
    Ok(out)
}

/// [`perturbation_sensitivity`] on a model's loss over `batch`; the store
/// itself is left untouched.
pub fn model_perturbation_sensitivity(
    spec: &ModelSpec,
    store: &ParamStore,
    batch: &Batch,
    indices: &[usize],
    rule: SigmaRule,
    rng: &mut Rng,
    trials: usize,
) -> Result<Vec<f64>> {
    let sigmas = sigma_for(rule, store, indices)?;
    let mut params = store.values().to_vec();
    let partition = store.partition();
    perturbation_sensitivity(&mut params, indices, &sigmas, rng, trials, |p| {
        loss_at(spec, partition, p, batch)
    })
}
