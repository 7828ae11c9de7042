//! Hybrid loss weightings: the total loss is a weighted sum of the main
//! losses of K+1 tasks plus a discounted weighted sum of their auxiliary
//! losses. Index 0 is the real domain; 1..=K are transformed domains.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Main-branch task weighting in [0, 1].
    pub alpha: f64,
    /// Auxiliary-branch task weighting in [0, 1].
    pub beta: f64,
    /// Auxiliary discount weight, ≥ 0.
    pub gamma: f64,
    /// Number of auxiliary (transformed-domain) tasks.
    pub k: usize,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument(format!(
                "alpha and beta must lie in [0, 1], got {} and {}",
                self.alpha, self.beta
            )));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Coefficient of the i-th main loss in the total.
    pub fn main_coefficient(&self, task: usize) -> f64 {
        if task == 0 {
            1.0 - self.alpha
        } else {
            self.alpha / self.k as f64
        }
    }

    /// Coefficient of the i-th auxiliary loss in the total.
    pub fn aux_coefficient(&self, task: usize) -> f64 {
        let w = if task == 0 {
            1.0 - self.beta
        } else {
            self.beta / self.k as f64
        };
        self.gamma * w
    }
}

/// `[(1−α)·L⁰ + (α/K)·ΣLⁱ] + γ·[(1−β)·A⁰ + (β/K)·ΣAⁱ]`, linear in every
/// loss input. Both slices must hold exactly K+1 entries.
pub fn hlw_total_loss(
    main_losses: &[f64],
    aux_losses: &[f64],
    weights: &LossWeights,
) -> Result<f64> {
    weights.validate()?;
    let expected = weights.k + 1;
    if main_losses.len() != expected || aux_losses.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "expected {expected} main and auxiliary losses, got {} and {}",
            main_losses.len(),
            aux_losses.len()
        )));
    }
    let mut total = 0.0;
    for (i, l) in main_losses.iter().enumerate() {
        total += weights.main_coefficient(i) * l;
    }
    for (i, a) in aux_losses.iter().enumerate() {
        total += weights.aux_coefficient(i) * a;
    }
    Ok(total)
}
