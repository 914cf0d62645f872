use crate::error::{EpiError, Result};

/// Cosine similarity between two task gradients; negative means conflict.
pub fn cosine_interference(g_i: &[f64], g_j: &[f64]) -> Result<f64> {
    EpiError::check_len(g_i.len(), g_j.len())?;
    let dot: f64 = g_i.iter().zip(g_j).map(|(a, b)| a * b).sum();
    let ni = g_i.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nj = g_j.iter().map(|a| a * a).sum::<f64>().sqrt();
    if ni == 0.0 || nj == 0.0 {
        return Err(EpiError::Degenerate("cosine of a zero gradient is undefined".into()));
    }
    Ok((dot / (ni * nj)).clamp(-1.0, 1.0))
}

/// Task gradient conflict, `max(0, −cos)`.
pub fn tgc(g_i: &[f64], g_j: &[f64]) -> Result<f64> {
    Ok((-cosine_interference(g_i, g_j)?).max(0.0))
}
