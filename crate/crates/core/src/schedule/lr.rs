use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Final learning rate of every layer, as a fraction of `eta_max`.
pub const FINAL_RATIO: f64 = 0.1;

/// Per-layer delayed warmup-cosine schedule.
///
/// Layer `i` of `n` starts `d_i = (n - 1 - i) * k` steps late, warms up
/// linearly for `w` steps and then decays along a half cosine to
/// `0.1 * eta_max`, which every layer reaches at global step `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerwiseScheduleParams {
    #[serde(rename = "N")]
    pub n: usize,
    pub k: u64,
    pub w: u64,
    #[serde(rename = "T")]
    pub t: u64,
    pub eta_max: f64,
}

impl LayerwiseScheduleParams {
    pub fn new(n: usize, k: u64, w: u64, t: u64, eta_max: f64) -> Result<Self> {
        let p = LayerwiseScheduleParams { n, k, w, t, eta_max };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.w == 0 {
            return Err(Error::contract("layerwise schedule needs positive N, k and w"));
        }
        if !(self.eta_max > 0.0 && self.eta_max.is_finite()) {
            return Err(Error::contract(format!(
                "layerwise eta_max must be positive, got {}",
                self.eta_max
            )));
        }
        let latest = (self.n as u64 - 1)
            .checked_mul(self.k)
            .and_then(|d| d.checked_add(self.w))
            .ok_or_else(|| Error::contract("layerwise schedule overflows"))?;
        if self.t <= latest {
            return Err(Error::contract(format!(
                "layerwise T = {} must exceed (N-1)*k + w = {latest}",
                self.t
            )));
        }
        Ok(())
    }

    pub fn eta_min(&self) -> f64 {
        FINAL_RATIO * self.eta_max
    }

    /// Start delay `d_i` of layer `i`.
    pub fn delay(&self, i: usize) -> u64 {
        (self.n - 1 - i) as u64 * self.k
    }

    /// Cosine decay length `D_i` of layer `i`.
    pub fn decay_len(&self, i: usize) -> u64 {
        self.t - self.delay(i) - self.w
    }

    /// Learning rate of layer `i` at global step `s`.
    pub fn lr(&self, i: usize, s: u64) -> Result<f64> {
        if i >= self.n {
            return Err(Error::contract(format!(
                "layer {i} outside schedule of {} layers",
                self.n
            )));
        }
        let d = self.delay(i);
        if s < d {
            return Ok(0.0);
        }
        let u = s - d;
        let (w, big_d) = (self.w, self.decay_len(i));
        Ok(if u < w {
            self.eta_max * u as f64 / w as f64
        } else if u == w {
            self.eta_max
        } else if u <= w + big_d {
            let (hi, lo) = (self.eta_max, self.eta_min());
            lo + (hi - lo) / 2.0 * (1.0 + (PI * (u - w) as f64 / big_d as f64).cos())
        } else {
            self.eta_min()
        })
    }
}

/// Global linear-warmup then cosine-decay schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineScheduleParams {
    pub eta_start: f64,
    pub eta_end: f64,
    pub warmup: u64,
    pub total: u64,
}

impl CosineScheduleParams {
    pub fn new(eta_start: f64, eta_end: f64, warmup: u64, total: u64) -> Result<Self> {
        let p = CosineScheduleParams {
            eta_start,
            eta_end,
            warmup,
            total,
        };
        p.validate()?;
        Ok(p)
    }

    /// Warmup over the first 1% of `total` steps.
    pub fn with_default_warmup(eta_start: f64, eta_end: f64, total: u64) -> Result<Self> {
        Self::new(eta_start, eta_end, total / 100, total)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total <= self.warmup {
            return Err(Error::contract(format!(
                "cosine schedule total ({}) must exceed warmup ({})",
                self.total, self.warmup
            )));
        }
        if !(self.eta_end >= 0.0 && self.eta_end <= self.eta_start && self.eta_start.is_finite()) {
            return Err(Error::contract(format!(
                "cosine schedule needs 0 <= eta_end <= eta_start, got {} and {}",
                self.eta_end, self.eta_start
            )));
        }
        Ok(())
    }

    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup {
            self.eta_start * step as f64 / self.warmup as f64
        } else if step == self.warmup {
            self.eta_start
        } else if step >= self.total {
            self.eta_end
        } else {
            let progress = (step - self.warmup) as f64 / (self.total - self.warmup) as f64;
            self.eta_end + (self.eta_start - self.eta_end) / 2.0 * (1.0 + (PI * progress).cos())
        }
    }
}

/// `eta_i(s)` of the layerwise schedule.
pub fn layerwise_lr(params: &LayerwiseScheduleParams, layer: usize, step: u64) -> Result<f64> {
    params.lr(layer, step)
}

pub fn cosine_lr(params: &CosineScheduleParams, step: u64) -> f64 {
    params.lr(step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_keeps_layer_zero_idle_until_its_delay() {
        let p = LayerwiseScheduleParams::new(32, 5000, 2000, 400_000, 1e-4).unwrap();
        assert_eq!(p.delay(0), 155_000);
        assert_eq!(p.lr(0, 154_999).unwrap(), 0.0);
        assert!(p.lr(0, 155_001).unwrap() > 0.0);
    }

    #[test]
    fn branch_boundaries_are_exact() {
        let p = LayerwiseScheduleParams::new(4, 10, 4, 50, 0.7).unwrap();
        for i in 0..4 {
            let d = p.delay(i);
            assert_eq!(p.lr(i, d).unwrap(), 0.0);
            assert_eq!(p.lr(i, d + p.w).unwrap(), 0.7);
            assert_eq!(p.lr(i, d + p.w + p.decay_len(i)).unwrap(), 0.1 * 0.7);
        }
    }

    #[test]
    fn too_short_horizon_is_rejected() {
        assert!(LayerwiseScheduleParams::new(4, 10, 4, 34, 1.0).is_err());
        assert!(LayerwiseScheduleParams::new(4, 10, 4, 35, 1.0).is_ok());
        assert!(LayerwiseScheduleParams::new(4, 10, 4, 50, 1.0)
            .unwrap()
            .lr(4, 0)
            .is_err());
    }

    #[test]
    fn cosine_hits_its_endpoints_and_midpoint() {
        let p = CosineScheduleParams::new(6e-5, 6e-6, 10, 110).unwrap();
        assert_eq!(p.lr(0), 0.0);
        assert_eq!(p.lr(10), 6e-5);
        assert_eq!(p.lr(110), 6e-6);
        assert_eq!(p.lr(5000), 6e-6);
        assert!((p.lr(60) - (6e-5 + 6e-6) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_inverted_ranges() {
        assert!(CosineScheduleParams::new(1e-4, 1e-3, 0, 10).is_err());
        assert!(CosineScheduleParams::new(1e-4, 1e-5, 10, 10).is_err());
        let p = CosineScheduleParams::with_default_warmup(1e-3, 1e-4, 1000).unwrap();
        assert_eq!(p.warmup, 10);
    }
}
