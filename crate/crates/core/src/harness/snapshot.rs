//! `EPIM` mask snapshots.
//!
//! Layout (little-endian): magic `EPIM`, format version `u32`, dimension
//! `u64`, step `u64`, ratio ×10⁶ `u32`, strategy code `u8`, then ⌈d/64⌉
//! `u64` words with bit `j` at position `j mod 64` of word `j / 64`.

use std::path::{Path, PathBuf};

use crate::epi::{BitMask, IsolationMask, MaskStrategy};
use crate::error::{EpiError, Result};

pub const MAGIC: &[u8; 4] = b"EPIM";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 4 + 1;

pub fn encode(mask: &IsolationMask) -> Result<Vec<u8>> {
    let ratio = (mask.ratio * 1e6).round();
    if !(0.0..=u32::MAX as f64).contains(&ratio) {
        return Err(EpiError::InvalidArgument(format!("ratio {} cannot be encoded", mask.ratio)));
    }
    let words = mask.bits.words();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * words.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(mask.dim() as u64).to_le_bytes());
    out.extend_from_slice(&mask.step.to_le_bytes());
    out.extend_from_slice(&(ratio as u32).to_le_bytes());
    out.push(mask.strategy.code());
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<IsolationMask> {
    let corrupt = |m: String| Err(EpiError::CorruptSnapshot(m));
    if bytes.len() < HEADER_LEN {
        return corrupt(format!("{} bytes is shorter than the {HEADER_LEN}-byte header", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return corrupt("bad magic".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return corrupt(format!("unsupported version {version}"));
    }
    let Ok(d) = usize::try_from(u64_at(8)) else {
        return corrupt("dimension does not fit in memory".into());
    };
    let step = u64_at(16);
    let ratio = u32_at(24) as f64 / 1e6;
    let Some(strategy) = MaskStrategy::from_code(bytes[28]) else {
        return corrupt(format!("unknown strategy code {}", bytes[28]));
    };
    let n_words = d.div_ceil(64);
    let expected = n_words.checked_mul(8).and_then(|b| b.checked_add(HEADER_LEN));
    if expected != Some(bytes.len()) {
        return corrupt(format!(
            "length {} does not match dimension {d} (expected {})",
            bytes.len(),
            expected.map_or("overflow".to_string(), |e| e.to_string())
        ));
    }
    let words = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let bits = BitMask::from_words(d, words).map_err(|e| EpiError::CorruptSnapshot(e.to_string()))?;
    Ok(IsolationMask {
        bits,
        step,
        ratio,
        strategy,
    })
}

/// File name for the snapshot taken at `step`; sorts in step order.
pub fn file_name(step: u64) -> String {
    format!("mask_{step:08}.epim")
}

pub fn write(path: &Path, mask: &IsolationMask) -> Result<()> {
    std::fs::write(path, encode(mask)?).map_err(|e| EpiError::io(path, e))
}

pub fn read(path: &Path) -> Result<IsolationMask> {
    decode(&std::fs::read(path).map_err(|e| EpiError::io(path, e))?)
}

/// All `.epim` files in `dir`, decoded and sorted by step.
pub fn read_dir(dir: &Path) -> Result<Vec<(PathBuf, IsolationMask)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| EpiError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| EpiError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "epim") {
            let mask = read(&path)?;
            out.push((path, mask));
        }
    }
    out.sort_by(|a, b| a.1.step.cmp(&b.1.step).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}
