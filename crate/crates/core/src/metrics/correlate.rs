use serde::{Deserialize, Serialize};

use crate::error::{EpiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
}

/// Sample Pearson and Spearman (average ranks for ties) correlation.
pub fn correlate(x: &[f64], y: &[f64]) -> Result<Correlation> {
    Ok(Correlation {
        pearson: pearson(x, y)?,
        spearman: spearman(x, y)?,
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    EpiError::check_len(x.len(), y.len())?;
    if x.len() < 3 {
        return Err(EpiError::InvalidArgument("correlation needs at least 3 pairs".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EpiError::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    EpiError::check_len(x.len(), y.len())?;
    pearson(&ranks(x), &ranks(y))
}

/// 1-based ranks, ties share their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}
