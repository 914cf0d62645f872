//! AdamW with decoupled weight decay, warm-up + cosine schedule, and the
//! masked parameter update.

use serde::{Deserialize, Serialize};

use crate::epi::BitMask;
use crate::error::{EpiError, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr >= 0.0 && unit(self.beta1) && unit(self.beta2) && self.eps > 0.0 && self.weight_decay >= 0.0) {
            return Err(EpiError::InvalidArgument(format!("bad AdamW hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// Moment buffers and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    config: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Full signed AdamW update (adaptive term plus decoupled decay) at
    /// learning rate `lr`. Moments advance for every coordinate, masked or not.
    pub fn delta(&mut self, grad: &[f64], theta: &[f64], lr: f64) -> Result<Vec<f64>> {
        EpiError::check_len(self.m.len(), grad.len())?;
        EpiError::check_len(self.m.len(), theta.len())?;
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(EpiError::InvalidArgument(format!("learning rate {lr}")));
        }
        if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
            return Err(EpiError::NonFinite(format!("gradient coordinate {j}")));
        }
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut delta = vec![0.0; grad.len()];
        for j in 0..grad.len() {
            let g = grad[j];
            self.m[j] = beta1 * self.m[j] + (1.0 - beta1) * g;
            self.v[j] = beta2 * self.v[j] + (1.0 - beta2) * g * g;
            let m_hat = self.m[j] / c1;
            let v_hat = self.v[j] / c2;
            delta[j] = -lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * theta[j]);
        }
        Ok(delta)
    }
}

/// `θ ← θ + (1 − m) ⊙ Δθ`: protected coordinates keep their exact bits.
pub fn apply_masked_update(store: &mut ParamStore, delta: &[f64], mask: &BitMask) -> Result<()> {
    EpiError::check_len(store.dim(), delta.len())?;
    EpiError::check_len(store.dim(), mask.len())?;
    for (j, (v, d)) in store.values_mut().iter_mut().zip(delta).enumerate() {
        if !mask.get(j) {
            *v += d;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleShape {
    Cosine,
    Constant,
}

/// Linear warm-up from 0 to the base rate, then cosine decay to 0 (or flat).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_fraction: f64,
    pub total_steps: usize,
    pub shape: ScheduleShape,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_fraction: f64, total_steps: usize, shape: ScheduleShape) -> Result<Self> {
        if !(0.0..1.0).contains(&warmup_fraction) || base_lr < 0.0 || total_steps == 0 {
            return Err(EpiError::InvalidArgument(format!(
                "schedule base {base_lr}, warm-up {warmup_fraction}, total {total_steps}"
            )));
        }
        Ok(Self {
            base_lr,
            warmup_fraction,
            total_steps,
            shape,
        })
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).round() as usize
    }

    /// Learning rate at `step`; steps past the end clamp to the final value.
    pub fn lr_at(&self, step: usize) -> f64 {
        let step = step.min(self.total_steps);
        let warmup = self.warmup_steps();
        if step < warmup {
            return self.base_lr * step as f64 / warmup as f64;
        }
        match self.shape {
            ScheduleShape::Constant => self.base_lr,
            ScheduleShape::Cosine => {
                let span = (self.total_steps - warmup).max(1) as f64;
                let progress = (step - warmup) as f64 / span;
                0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Partition;

    /// Scalar AdamW written straight from the update equations.
    fn scalar_adamw(g: f64, m0: f64, v0: f64, t: i32, theta: f64, lr: f64, c: &AdamWConfig) -> (f64, f64, f64) {
        let m = c.beta1 * m0 + (1.0 - c.beta1) * g;
        let v = c.beta2 * v0 + (1.0 - c.beta2) * g * g;
        let mh = m / (1.0 - c.beta1.powi(t));
        let vh = v / (1.0 - c.beta2.powi(t));
        (-lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * theta), m, v)
    }

    #[test]
    fn zero_grad_zero_decay_is_zero_delta() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, 3).unwrap();
        let d = opt.delta(&[0.0; 3], &[1.0, -2.0, 3.0], 1e-3).unwrap();
        assert_eq!(d, vec![0.0; 3]);
    }

    #[test]
    fn first_step_unit_gradient() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, 4).unwrap();
        let d = opt.delta(&[1.0; 4], &[0.0; 4], 0.001).unwrap();
        // Independent evaluation: m_hat = 1, v_hat = 1, so -lr / (1 + eps).
        let expected = -0.001 * (0.1 / (1.0 - 0.9)) / ((0.001f64 / (1.0 - 0.999)).sqrt() + 1e-8);
        for x in d {
            assert!((x - expected).abs() < 1e-15);
            assert!((x - (-0.000_999_999_990_000_000_3)).abs() < 1e-15);
        }
    }

    #[test]
    fn pure_decoupled_decay() {
        let cfg = AdamWConfig {
            weight_decay: 0.05,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, 2).unwrap();
        let theta = [0.7, -1.3];
        let lr = 0.01;
        let d = opt.delta(&[0.0, 0.0], &theta, lr).unwrap();
        for (x, t) in d.iter().zip(theta) {
            assert_eq!(*x, -lr * (0.05 * t));
        }
    }

    #[test]
    fn matches_scalar_oracle_over_several_steps() {
        let cfg = AdamWConfig::default();
        let grads = [[0.3, -1.2], [0.8, 0.1], [-0.4, 2.5]];
        let mut opt = AdamW::new(cfg, 2).unwrap();
        let mut theta = [0.5, -0.25];
        let mut m = [0.0; 2];
        let mut v = [0.0; 2];
        for (t, g) in grads.iter().enumerate() {
            let d = opt.delta(g, &theta, 2e-3).unwrap();
            for j in 0..2 {
                let (dj, mj, vj) = scalar_adamw(g[j], m[j], v[j], t as i32 + 1, theta[j], 2e-3, &cfg);
                assert!((d[j] - dj).abs() <= 1e-12);
                m[j] = mj;
                v[j] = vj;
                theta[j] += dj;
            }
        }
        assert_eq!(opt.step(), 3);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut opt = AdamW::new(AdamWConfig::default(), 2).unwrap();
        assert!(matches!(opt.delta(&[1.0, f64::NAN], &[0.0; 2], 1e-3), Err(EpiError::NonFinite(_))));
        assert!(opt.delta(&[1.0], &[0.0; 2], 1e-3).is_err());
    }

    fn store3() -> ParamStore {
        ParamStore::zeros(Partition::build(&[("w", 3)]).unwrap())
    }

    #[test]
    fn masked_update_cases() {
        let mut s = store3();
        apply_masked_update(&mut s, &[1.0; 3], &BitMask::from_indices(3, &[0, 1, 2])).unwrap();
        assert_eq!(s.values(), &[0.0; 3]);

        let mut s = store3();
        apply_masked_update(&mut s, &[1.0, 2.0, 3.0], &BitMask::zeros(3)).unwrap();
        assert_eq!(s.values(), &[1.0, 2.0, 3.0]);

        let mut s = store3();
        apply_masked_update(&mut s, &[1.0; 3], &BitMask::from_indices(3, &[2])).unwrap();
        assert_eq!(s.values(), &[1.0, 1.0, 0.0]);

        assert!(apply_masked_update(&mut s, &[1.0; 2], &BitMask::zeros(3)).is_err());
        assert!(apply_masked_update(&mut s, &[1.0; 3], &BitMask::zeros(4)).is_err());
    }

    #[test]
    fn protected_moments_keep_evolving() {
        let mut opt = AdamW::new(AdamWConfig::default(), 1).unwrap();
        let mut s = ParamStore::zeros(Partition::build(&[("w", 1)]).unwrap());
        s.values_mut()[0] = 0.4;
        let mask = BitMask::from_indices(1, &[0]);
        let mut last_v = 0.0;
        for _ in 0..5 {
            let d = opt.delta(&[0.5], s.values(), 1e-3).unwrap();
            apply_masked_update(&mut s, &d, &mask).unwrap();
            assert!(opt.second_moment()[0] > last_v);
            last_v = opt.second_moment()[0];
        }
        assert_eq!(s.values()[0], 0.4);
    }

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::new(1e-3, 0.03, 1000, ScheduleShape::Cosine).unwrap();
        assert_eq!(s.warmup_steps(), 30);
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(30), 1e-3);
        assert!(s.lr_at(1000).abs() < 1e-18);
        assert!(s.lr_at(5000).abs() < 1e-18);
        assert!((s.lr_at(15) - 0.5e-3).abs() < 1e-15);
        // continuity across the warm-up boundary
        assert!((s.lr_at(29) - s.lr_at(30)).abs() < 1e-3 / 29.0);
        let c = LrSchedule::new(1e-3, 0.0, 10, ScheduleShape::Constant).unwrap();
        assert_eq!(c.lr_at(0), 1e-3);
        assert_eq!(c.lr_at(10), 1e-3);
        assert!(LrSchedule::new(1e-3, 1.0, 10, ScheduleShape::Cosine).is_err());
    }

    #[test]
    fn schedule_never_negative() {
        let s = LrSchedule::new(3e-4, 0.1, 77, ScheduleShape::Cosine).unwrap();
        for t in 0..100 {
            assert!(s.lr_at(t) >= 0.0);
        }
    }
}
