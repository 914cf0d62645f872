use serde::{Deserialize, Serialize};

use crate::error::{EpiError, Result};

/// Fixed-length packed bitset; bit `j` lives in word `j / 64` at position
/// `j % 64`. Bits past `len` are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    words: Vec<u64>,
    len: usize,
}

impl BitMask {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut m = Self {
            words: vec![u64::MAX; len.div_ceil(64)],
            len,
        };
        m.clear_tail();
        m
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Self {
        let mut m = Self::zeros(len);
        for &j in indices {
            m.set(j, true);
        }
        m
    }

    /// Rebuilds a mask from raw words, rejecting stray bits past `len`.
    pub fn from_words(len: usize, words: Vec<u64>) -> Result<Self> {
        EpiError::check_len(len.div_ceil(64), words.len())?;
        let m = Self { words, len };
        let mut clean = m.clone();
        clean.clear_tail();
        if clean != m {
            return Err(EpiError::InvalidArgument("bits set beyond mask length".into()));
        }
        Ok(m)
    }

    fn clear_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, j: usize) -> bool {
        assert!(j < self.len, "bit {j} out of range {}", self.len);
        self.words[j / 64] >> (j % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, j: usize, on: bool) {
        assert!(j < self.len, "bit {j} out of range {}", self.len);
        let bit = 1u64 << (j % 64);
        if on {
            self.words[j / 64] |= bit;
        } else {
            self.words[j / 64] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Set bits within `range`.
    pub fn count_ones_in(&self, range: std::ops::Range<usize>) -> usize {
        range.filter(|&j| self.get(j)).count()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    fn zip_words(&self, other: &BitMask, f: impl Fn(u64, u64) -> u64) -> Result<BitMask> {
        EpiError::check_len(self.len, other.len)?;
        Ok(BitMask {
            words: self.words.iter().zip(&other.words).map(|(&a, &b)| f(a, b)).collect(),
            len: self.len,
        })
    }

    pub fn and(&self, other: &BitMask) -> Result<BitMask> {
        self.zip_words(other, |a, b| a & b)
    }

    pub fn or(&self, other: &BitMask) -> Result<BitMask> {
        self.zip_words(other, |a, b| a | b)
    }

    pub fn xor(&self, other: &BitMask) -> Result<BitMask> {
        self.zip_words(other, |a, b| a ^ b)
    }

    /// `self ∖ other`.
    pub fn and_not(&self, other: &BitMask) -> Result<BitMask> {
        self.zip_words(other, |a, b| a & !b)
    }
}

/// How a mask's protected set was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskStrategy {
    /// Layer-normalised scores, global top-k.
    Epi,
    /// Probe-derived and frozen.
    Static,
    /// Top round(p·|group|) within every group.
    PerLayerBudget,
    /// Global top-k of unnormalised sensitivity.
    GlobalRaw,
    /// k uniformly random coordinates.
    Random,
    /// Nothing protected (all trainable).
    None,
}

impl MaskStrategy {
    pub fn code(self) -> u8 {
        match self {
            MaskStrategy::Epi => 0,
            MaskStrategy::Static => 1,
            MaskStrategy::PerLayerBudget => 2,
            MaskStrategy::GlobalRaw => 3,
            MaskStrategy::Random => 4,
            MaskStrategy::None => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => MaskStrategy::Epi,
            1 => MaskStrategy::Static,
            2 => MaskStrategy::PerLayerBudget,
            3 => MaskStrategy::GlobalRaw,
            4 => MaskStrategy::Random,
            5 => MaskStrategy::None,
            _ => return None,
        })
    }
}

/// A protected-coordinate set plus its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct IsolationMask {
    pub bits: BitMask,
    pub step: u64,
    pub ratio: f64,
    pub strategy: MaskStrategy,
}

impl IsolationMask {
    /// All-trainable mask, the state before the first refresh.
    pub fn empty(dim: usize) -> Self {
        Self {
            bits: BitMask::zeros(dim),
            step: 0,
            ratio: 0.0,
            strategy: MaskStrategy::None,
        }
    }

    pub fn dim(&self) -> usize {
        self.bits.len()
    }

    pub fn popcount(&self) -> usize {
        self.bits.count_ones()
    }
}

/// Coordinates newly protected and newly released between two masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTransition {
    pub locked: Vec<usize>,
    pub freed: Vec<usize>,
    pub step: u64,
}

pub fn diff_masks(prev: &IsolationMask, next: &IsolationMask) -> Result<MaskTransition> {
    let locked = next.bits.and_not(&prev.bits)?;
    let freed = prev.bits.and_not(&next.bits)?;
    Ok(MaskTransition {
        locked: locked.iter_ones().collect(),
        freed: freed.iter_ones().collect(),
        step: next.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(d: usize, on: &[usize]) -> IsolationMask {
        IsolationMask {
            bits: BitMask::from_indices(d, on),
            step: 1,
            ratio: 0.1,
            strategy: MaskStrategy::Epi,
        }
    }

    #[test]
    fn bit_ops() {
        let mut m = BitMask::zeros(130);
        m.set(0, true);
        m.set(64, true);
        m.set(129, true);
        assert_eq!(m.count_ones(), 3);
        assert_eq!(m.iter_ones().collect::<Vec<_>>(), vec![0, 64, 129]);
        m.set(64, false);
        assert!(!m.get(64));
        assert_eq!(BitMask::ones(70).count_ones(), 70);
        assert_eq!(BitMask::ones(70).words()[1], (1 << 6) - 1);
        assert!(BitMask::from_words(3, vec![0b1000]).is_err());
        assert!(BitMask::from_words(3, vec![0b100]).is_ok());
    }

    #[test]
    fn transitions() {
        let t = diff_masks(&mask(8, &[3]), &mask(8, &[3])).unwrap();
        assert!(t.locked.is_empty() && t.freed.is_empty());
        let t = diff_masks(&mask(8, &[0, 1]), &mask(8, &[1, 2])).unwrap();
        assert_eq!(t.locked, vec![2]);
        assert_eq!(t.freed, vec![0]);
        let t = diff_masks(&mask(8, &[]), &mask(8, &[5])).unwrap();
        assert_eq!(t.locked, vec![5]);
        assert!(t.freed.is_empty());
        assert!(diff_masks(&mask(8, &[]), &mask(9, &[])).is_err());
    }

    #[test]
    fn strategy_codes_round_trip() {
        for s in [
            MaskStrategy::Epi,
            MaskStrategy::Static,
            MaskStrategy::PerLayerBudget,
            MaskStrategy::GlobalRaw,
            MaskStrategy::Random,
            MaskStrategy::None,
        ] {
            assert_eq!(MaskStrategy::from_code(s.code()), Some(s));
        }
        assert_eq!(MaskStrategy::from_code(42), None);
    }

    proptest! {
        #[test]
        fn transition_partitions_popcount_change(
            a in proptest::collection::vec(any::<bool>(), 1..200),
            seed in any::<u64>(),
        ) {
            let d = a.len();
            let prev_on: Vec<usize> = a.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
            let next_on: Vec<usize> = (0..d).filter(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let prev = mask(d, &prev_on);
            let next = mask(d, &next_on);
            let t = diff_masks(&prev, &next).unwrap();
            prop_assert_eq!(
                next.popcount() as i64 - prev.popcount() as i64,
                t.locked.len() as i64 - t.freed.len() as i64
            );
            for j in &t.locked {
                prop_assert!(next.bits.get(*j) && !prev.bits.get(*j));
                prop_assert!(!t.freed.contains(j));
            }
            for j in &t.freed {
                prop_assert!(prev.bits.get(*j) && !next.bits.get(*j));
            }
        }
    }
}
