use crate::error::{Error, Result};

/// Optimizer schedule: poly learning-rate decay, Nesterov momentum, and
/// the offset warm-up regime (offsets frozen for the first
/// `offset_freeze_iters` iterations, then trained at
/// `offset_lr_multiplier` times the base rate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub power: f64,
    pub max_iter: usize,
    pub offset_freeze_iters: usize,
    pub offset_lr_multiplier: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Schedule {
    /// Paper-style defaults for a run of `max_iter` iterations; the
    /// offset warm-up covers the first 20/120 of the run.
    pub fn with_max_iter(max_iter: usize) -> Self {
        Schedule {
            base_lr: 0.05,
            power: 0.9,
            max_iter,
            offset_freeze_iters: max_iter * 20 / 120,
            offset_lr_multiplier: 1.0,
            momentum: 0.9,
            weight_decay: 2e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 || self.power <= 0.0 || self.max_iter == 0 {
            return Err(Error::InvalidArgument(format!(
                "schedule requires base_lr > 0, power > 0, max_iter > 0; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn offsets_frozen(&self, iter: usize) -> bool {
        iter < self.offset_freeze_iters
    }
}

/// `base_lr · (1 − iter/max_iter)^power`; zero past the end of the run.
pub fn poly_lr(iter: usize, schedule: &Schedule) -> f64 {
    if iter >= schedule.max_iter {
        return 0.0;
    }
    let frac = 1.0 - iter as f64 / schedule.max_iter as f64;
    schedule.base_lr * frac.powf(schedule.power)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_endpoints_and_midpoint() {
        let s = Schedule::with_max_iter(1000);
        assert_eq!(poly_lr(0, &s), 0.05);
        assert_eq!(poly_lr(1000, &s), 0.0);
        assert_eq!(poly_lr(2000, &s), 0.0);
        let mid = poly_lr(500, &s);
        assert!((mid - 0.05 * 0.5f64.powf(0.9)).abs() < 1e-15);
    }

    #[test]
    fn freeze_window() {
        let s = Schedule::with_max_iter(120);
        assert_eq!(s.offset_freeze_iters, 20);
        assert!(s.offsets_frozen(0));
        assert!(s.offsets_frozen(19));
        assert!(!s.offsets_frozen(20));
    }
}
