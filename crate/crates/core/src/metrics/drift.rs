use std::ops::Range;

use crate::epi::{BitMask, IsolationMask};
use crate::error::{EpiError, Result};
use crate::params::Partition;

/// Number of coordinates where the masks disagree.
pub fn hamming(a: &BitMask, b: &BitMask) -> Result<usize> {
    Ok(a.xor(b)?.count_ones())
}

/// `|A ∩ B| / |A ∪ B|` over the protected sets.
pub fn jaccard(a: &BitMask, b: &BitMask) -> Result<f64> {
    let union = a.or(b)?.count_ones();
    if union == 0 {
        return Err(EpiError::Degenerate("jaccard of two empty masks".into()));
    }
    Ok(a.and(b)?.count_ones() as f64 / union as f64)
}

/// Mean fraction (percent) of bits in `range` that change between
/// consecutive masks of `series`.
pub fn flip_rate(series: &[IsolationMask], range: Range<usize>) -> Result<f64> {
    if series.len() < 2 {
        return Err(EpiError::InvalidArgument("flip rate needs at least two masks".into()));
    }
    if range.is_empty() {
        return Err(EpiError::InvalidArgument("empty group range".into()));
    }
    let d = series[0].dim();
    if range.end > d {
        return Err(EpiError::LengthMismatch {
            expected: d,
            actual: range.end,
        });
    }
    let width = range.len() as f64;
    let mut total = 0.0;
    for pair in series.windows(2) {
        let diff = pair[0].bits.xor(&pair[1].bits)?;
        total += diff.count_ones_in(range.clone()) as f64 / width;
    }
    Ok(total / (series.len() - 1) as f64 * 100.0)
}

/// Splits the group order into four contiguous buckets (fewer when there are
/// fewer than four groups). Returns `(label, index range)`.
pub fn quartile_buckets(partition: &Partition) -> Vec<(String, Range<usize>)> {
    let groups = partition.groups();
    let n = groups.len();
    (0..4)
        .filter_map(|b| {
            let (lo, hi) = (b * n / 4, (b + 1) * n / 4);
            (hi > lo).then(|| {
                let first = &groups[lo];
                let last = &groups[hi - 1];
                let label = if lo + 1 == hi {
                    first.name.clone()
                } else {
                    format!("{}..{}", first.name, last.name)
                };
                (label, first.offset..last.offset + last.len)
            })
        })
        .collect()
}

/// Jaccard overlap of every task pair's top-p% mask, `(i, j, overlap)`.
pub fn task_pair_overlap(masks: &[IsolationMask]) -> Result<Vec<(usize, usize, f64)>> {
    let mut out = Vec::new();
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            out.push((i, j, jaccard(&masks[i].bits, &masks[j].bits)?));
        }
    }
    Ok(out)
}
