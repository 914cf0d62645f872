use crate::error::{EpiError, Result};
use crate::params::Partition;

/// Guard in the min-max denominator.
pub const NORMALIZE_EPS: f64 = 1e-12;

/// Exponential moving average of squared gradients, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityState {
    values: Vec<f64>,
    beta: f64,
    steps: u64,
}

impl SensitivityState {
    pub fn new(dim: usize, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(EpiError::InvalidArgument(format!("beta must be in [0, 1), got {beta}")));
        }
        Ok(Self {
            values: vec![0.0; dim],
            beta,
            steps: 0,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `S ← β·S + (1 − β)·g⊙g`.
    pub fn accumulate(&mut self, grad: &[f64]) -> Result<()> {
        EpiError::check_len(self.values.len(), grad.len())?;
        if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
            return Err(EpiError::NonFinite(format!("gradient coordinate {j}")));
        }
        let beta = self.beta;
        if beta == 0.0 {
            for (s, g) in self.values.iter_mut().zip(grad) {
                *s = g * g;
            }
        } else {
            for (s, g) in self.values.iter_mut().zip(grad) {
                *s = beta * *s + (1.0 - beta) * (g * g);
            }
        }
        self.steps += 1;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.values.fill(0.0);
        self.steps = 0;
    }
}

/// Per-group min-max rescaling: `(S − min) / (max − min + eps)`.
///
/// Groups with no spread map to all zeros, so they claim no protection.
pub fn normalize_layerwise(scores: &[f64], partition: &Partition, eps: f64) -> Result<Vec<f64>> {
    EpiError::check_len(partition.dim(), scores.len())?;
    if !(eps > 0.0) {
        return Err(EpiError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut out = vec![0.0; scores.len()];
    for g in partition.groups() {
        let s = &scores[g.range()];
        let (lo, hi) = s
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let denom = hi - lo + eps;
        for (o, &v) in out[g.range()].iter_mut().zip(s) {
            *o = ((v - lo) / denom).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_step_values() {
        let mut s = SensitivityState::new(2, 0.9).unwrap();
        s.accumulate(&[2.0, 0.0]).unwrap();
        assert!((s.values()[0] - 0.4).abs() < 1e-15);
        assert_eq!(s.values()[1], 0.0);
    }

    #[test]
    fn beta_zero_is_instantaneous() {
        let mut s = SensitivityState::new(3, 0.0).unwrap();
        s.accumulate(&[5.0, 1.0, -2.0]).unwrap();
        s.accumulate(&[1.5, -3.0, 0.25]).unwrap();
        assert_eq!(s.values(), &[2.25, 9.0, 0.0625]);
    }

    #[test]
    fn geometric_series_closed_form() {
        let g = [0.3, -1.7, 2.2];
        for beta in [0.0, 0.5, 0.9, 0.99] {
            let mut s = SensitivityState::new(3, beta).unwrap();
            for t in 1..=300 {
                s.accumulate(&g).unwrap();
                let factor = 1.0 - f64::powi(beta, t);
                for j in 0..3 {
                    let expected = factor * g[j] * g[j];
                    assert!((s.values()[j] - expected).abs() <= 1e-12, "beta {beta} t {t}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(SensitivityState::new(2, 1.0).is_err());
        assert!(SensitivityState::new(2, -0.1).is_err());
        let mut s = SensitivityState::new(2, 0.9).unwrap();
        assert!(s.accumulate(&[f64::INFINITY, 0.0]).is_err());
        assert!(s.accumulate(&[1.0]).is_err());
    }

    #[test]
    fn normalization_examples() {
        let p = Partition::build(&[("a", 3)]).unwrap();
        let n = normalize_layerwise(&[2.0, 4.0, 6.0], &p, NORMALIZE_EPS).unwrap();
        for (x, e) in n.iter().zip([0.0, 0.5, 1.0]) {
            assert!((x - e).abs() < 1e-9);
        }
        let n = normalize_layerwise(&[5.0, 5.0, 5.0], &p, NORMALIZE_EPS).unwrap();
        assert_eq!(n, vec![0.0; 3]);

        let two = Partition::build(&[("big", 3), ("small", 3)]).unwrap();
        let n = normalize_layerwise(&[1e3, 2e3, 3e3, 1.0, 2.0, 3.0], &two, NORMALIZE_EPS).unwrap();
        assert!((n[2] - 1.0).abs() < 1e-9);
        assert!((n[5] - 1.0).abs() < 1e-9);
    }

    /// Bound on one EMA step: |S_t − S_{t−1}| = (1−β)|g² − S_{t−1}|.
    #[test]
    fn low_pass_step_bound() {
        use rand::Rng as _;
        let mut rng = crate::rng::Rng::seeded(4);
        let beta = 0.99;
        let mut s = SensitivityState::new(16, beta).unwrap();
        for _ in 0..500 {
            let g: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
            let prev = s.values().to_vec();
            s.accumulate(&g).unwrap();
            for j in 0..16 {
                let rel = (s.values()[j] - prev[j]).abs() / (prev[j].abs() + 1e-12);
                let ratio = (g[j] * g[j] / (prev[j] + 1e-12)).max(1.0);
                assert!(rel <= (1.0 - beta) * ratio * (1.0 + 1e-9) + 1e-15);
            }
        }
    }

    proptest! {
        #[test]
        fn normalized_range_and_ranking(
            raw in proptest::collection::vec(0.0f64..1e6, 2..60),
            split in 1usize..59,
        ) {
            let split = split.min(raw.len() - 1);
            let p = Partition::build(&[("a", split), ("b", raw.len() - split)]).unwrap();
            let n = normalize_layerwise(&raw, &p, NORMALIZE_EPS).unwrap();
            for g in p.groups() {
                let r = &raw[g.range()];
                let s = &n[g.range()];
                prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
                for i in 0..r.len() {
                    for j in 0..r.len() {
                        if r[i] < r[j] {
                            prop_assert!(s[i] <= s[j]);
                        }
                    }
                }
                let (lo, hi) = r.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
                if hi - lo > 1e-3 {
                    let max = s.iter().copied().fold(0.0, f64::max);
                    prop_assert!(max >= 1.0 - 1e-6);
                }
            }
        }
    }
}
