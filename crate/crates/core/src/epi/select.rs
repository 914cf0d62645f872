use std::cmp::Ordering;

use rand::seq::index::sample;

use super::mask::{BitMask, IsolationMask, MaskStrategy};
use super::sensitivity::{normalize_layerwise, SensitivityState, NORMALIZE_EPS};
use crate::error::{EpiError, Result};
use crate::params::Partition;
use crate::rng::Rng;

fn check_ratio(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(EpiError::InvalidArgument(format!("isolation ratio must be in (0, 1), got {p}")))
    }
}

/// `round(p·d)`, the protected-set size.
pub fn target_count(p: f64, dim: usize) -> Result<usize> {
    check_ratio(p)?;
    Ok((p * dim as f64).round() as usize)
}

/// Exact top-`k` by score; among equal scores the lower index wins.
pub fn top_k(scores: &[f64], k: usize) -> BitMask {
    let mut mask = BitMask::zeros(scores.len());
    if k == 0 {
        return mask;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| -> Ordering { scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)) };
    let k = k.min(order.len());
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
    }
    for &j in &order[..k] {
        mask.set(j, true);
    }
    mask
}

/// Builds a mask from already-chosen scores: normalised scores for `Epi`,
/// `PerLayerBudget` and `Static`, raw sensitivity for `GlobalRaw`; `Random`
/// ignores them.
pub fn generate_mask(
    scores: &[f64],
    p: f64,
    strategy: MaskStrategy,
    partition: &Partition,
    rng: &mut Rng,
    step: u64,
) -> Result<IsolationMask> {
    EpiError::check_len(partition.dim(), scores.len())?;
    let d = scores.len();
    let k = target_count(p, d)?;
    let bits = match strategy {
        MaskStrategy::Epi | MaskStrategy::GlobalRaw | MaskStrategy::Static => {
            ensure_nonzero(k, p, d)?;
            top_k(scores, k)
        }
        MaskStrategy::PerLayerBudget => {
            let mut bits = BitMask::zeros(d);
            let mut total = 0;
            for g in partition.groups() {
                let kg = (p * g.len as f64).round() as usize;
                total += kg;
                for j in top_k(&scores[g.range()], kg).iter_ones() {
                    bits.set(g.offset + j, true);
                }
            }
            ensure_nonzero(total, p, d)?;
            bits
        }
        MaskStrategy::Random => {
            ensure_nonzero(k, p, d)?;
            let mut picked = sample(rng, d, k).into_vec();
            picked.sort_unstable();
            BitMask::from_indices(d, &picked)
        }
        MaskStrategy::None => {
            return Err(EpiError::InvalidArgument("strategy `none` does not select coordinates".into()))
        }
    };
    Ok(IsolationMask {
        bits,
        step,
        ratio: p,
        strategy,
    })
}

fn ensure_nonzero(k: usize, p: f64, d: usize) -> Result<()> {
    if k == 0 {
        Err(EpiError::InvalidArgument(format!(
            "ratio {p} selects no coordinates out of {d}"
        )))
    } else {
        Ok(())
    }
}

/// Picks the score vector the strategy calls for and builds the mask.
pub fn select_mask(
    sensitivity: &SensitivityState,
    p: f64,
    strategy: MaskStrategy,
    partition: &Partition,
    rng: &mut Rng,
    step: u64,
) -> Result<IsolationMask> {
    match strategy {
        MaskStrategy::GlobalRaw | MaskStrategy::Random => {
            generate_mask(sensitivity.values(), p, strategy, partition, rng, step)
        }
        _ => {
            let normalized = normalize_layerwise(sensitivity.values(), partition, NORMALIZE_EPS)?;
            generate_mask(&normalized, p, strategy, partition, rng, step)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshDecision {
    Refresh,
    Retain,
}

/// Refresh exactly at positive multiples of `interval`.
pub fn refresh_policy(step: u64, interval: u64) -> Result<RefreshDecision> {
    if interval == 0 {
        return Err(EpiError::InvalidArgument("refresh interval must be >= 1".into()));
    }
    Ok(if step > 0 && step.is_multiple_of(interval) {
        RefreshDecision::Refresh
    } else {
        RefreshDecision::Retain
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn rng() -> Rng {
        Rng::seeded(0)
    }

    #[test]
    fn top_two_with_index_tie_break() {
        let p = Partition::build(&[("a", 4)]).unwrap();
        let m = generate_mask(&[0.9, 0.1, 0.9, 0.5], 0.5, MaskStrategy::Epi, &p, &mut rng(), 0).unwrap();
        assert_eq!(m.bits.iter_ones().collect::<Vec<_>>(), vec![0, 2]);
        // Three-way tie at the threshold: lowest indices win.
        let t = top_k(&[1.0, 1.0, 1.0, 0.0], 2);
        assert_eq!(t.iter_ones().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn cardinality_is_exact() {
        let p = Partition::build(&[("w", 900), ("b", 100)]).unwrap();
        let scores: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64).collect();
        for strategy in [MaskStrategy::Epi, MaskStrategy::GlobalRaw, MaskStrategy::Random] {
            let m = generate_mask(&scores, 0.01, strategy, &p, &mut rng(), 0).unwrap();
            assert_eq!(m.popcount(), 10, "{strategy:?}");
        }
        let m = generate_mask(&scores, 0.05, MaskStrategy::PerLayerBudget, &p, &mut rng(), 0).unwrap();
        assert_eq!(m.popcount(), 45 + 5);
        assert_eq!(m.bits.count_ones_in(900..1000), 5);
    }

    #[test]
    fn too_small_ratio_is_an_error() {
        let p = Partition::build(&[("w", 10)]).unwrap();
        let s = vec![1.0; 10];
        assert!(generate_mask(&s, 0.01, MaskStrategy::Epi, &p, &mut rng(), 0).is_err());
        assert!(generate_mask(&s, 0.0, MaskStrategy::Epi, &p, &mut rng(), 0).is_err());
        assert!(generate_mask(&s, 1.0, MaskStrategy::Epi, &p, &mut rng(), 0).is_err());
        assert!(generate_mask(&s, 0.04, MaskStrategy::PerLayerBudget, &p, &mut rng(), 0).is_err());
    }

    /// Brute force on a two-group scale-mismatch instance: group A is ~100x
    /// larger in raw scale; B's maximum only survives normalisation.
    #[test]
    fn epi_and_global_raw_diverge_on_scale_mismatch() {
        let p = Partition::build(&[("a", 5), ("b", 5)]).unwrap();
        let raw = [100.0, 150.0, 200.0, 250.0, 300.0, 0.5, 0.6, 0.7, 0.8, 3.0];
        let mut sens = SensitivityState::new(10, 0.0).unwrap();
        sens.accumulate(&raw.map(f64::sqrt)).unwrap();
        let global = select_mask(&sens, 0.2, MaskStrategy::GlobalRaw, &p, &mut rng(), 0).unwrap();
        let epi = select_mask(&sens, 0.2, MaskStrategy::Epi, &p, &mut rng(), 0).unwrap();

        // Exhaustive: the k=2 subset maximising the summed score.
        let best = |scores: &[f64]| {
            let mut best = (f64::MIN, 0, 0);
            for i in 0..10 {
                for j in i + 1..10 {
                    let s = scores[i] + scores[j];
                    if s > best.0 {
                        best = (s, i, j);
                    }
                }
            }
            vec![best.1, best.2]
        };
        let normalized = normalize_layerwise(sens.values(), &p, NORMALIZE_EPS).unwrap();
        assert_eq!(global.bits.iter_ones().collect::<Vec<_>>(), best(sens.values()));
        assert_eq!(epi.bits.iter_ones().collect::<Vec<_>>(), best(&normalized));
        assert_eq!(global.bits.iter_ones().collect::<Vec<_>>(), vec![3, 4]);
        assert!(epi.bits.get(9));
        assert!(!global.bits.get(9));
    }

    #[test]
    fn refresh_cadence() {
        assert_eq!(refresh_policy(500, 500).unwrap(), RefreshDecision::Refresh);
        assert_eq!(refresh_policy(499, 500).unwrap(), RefreshDecision::Retain);
        assert_eq!(refresh_policy(0, 500).unwrap(), RefreshDecision::Retain);
        for t in 1..20 {
            assert_eq!(refresh_policy(t, 1).unwrap(), RefreshDecision::Refresh);
        }
        assert!(refresh_policy(3, 0).is_err());
    }

    proptest! {
        #[test]
        fn epi_mask_invariant_to_per_group_rescaling(
            raw in proptest::collection::vec(0.01f64..100.0, 40),
            c in 1e-3f64..1e3,
        ) {
            let p = Partition::build(&[("a", 20), ("b", 20)]).unwrap();
            let mut scaled = raw.clone();
            for v in &mut scaled[20..] {
                *v *= c;
            }
            let mk = |v: &[f64], strategy| {
                let mut s = SensitivityState::new(40, 0.0).unwrap();
                s.accumulate(&v.iter().map(|x| x.sqrt()).collect::<Vec<_>>()).unwrap();
                select_mask(&s, 0.1, strategy, &p, &mut Rng::seeded(0), 0).unwrap()
            };
            prop_assert_eq!(mk(&raw, MaskStrategy::Epi).bits, mk(&scaled, MaskStrategy::Epi).bits);
        }

        #[test]
        fn top_k_selects_maxima(scores in proptest::collection::vec(-10.0f64..10.0, 1..80), k in 0usize..80) {
            let k = k.min(scores.len());
            let m = top_k(&scores, k);
            prop_assert_eq!(m.count_ones(), k);
            let chosen_min = m.iter_ones().map(|j| scores[j]).fold(f64::INFINITY, f64::min);
            for j in 0..scores.len() {
                if !m.get(j) {
                    prop_assert!(scores[j] <= chosen_min);
                }
            }
        }
    }

    /// Global-raw does not share the rescaling invariance.
    #[test]
    fn global_raw_is_scale_sensitive() {
        let p = Partition::build(&[("a", 4), ("b", 4)]).unwrap();
        let raw = [4.0, 3.0, 2.0, 1.0, 3.5, 2.5, 1.5, 0.5];
        let mut scaled = raw;
        for v in &mut scaled[4..] {
            *v *= 100.0;
        }
        let m = |v: &[f64]| generate_mask(v, 0.25, MaskStrategy::GlobalRaw, &p, &mut rng(), 0).unwrap();
        assert_ne!(m(&raw).bits, m(&scaled).bits);
        let norm = |v: &[f64]| normalize_layerwise(v, &p, NORMALIZE_EPS).unwrap();
        let e = |v: &[f64]| generate_mask(&norm(v), 0.25, MaskStrategy::Epi, &p, &mut rng(), 0).unwrap();
        assert_eq!(e(&raw).bits, e(&scaled).bits);
    }
}
