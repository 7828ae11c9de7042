//! Central finite-difference checking of analytic gradients.

use std::fmt;

use crate::error::{Error, Result};

/// Floor for the relative-error denominator, so near-zero gradients are
/// compared absolutely at this scale.
const REL_DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct GradientCheckReport {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

impl fmt::Display for GradientCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "gradcheck {}: max_rel={:.3e} max_abs={:.3e} worst_index={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.max_abs_error,
            self.worst_index
        )
    }
}

/// Compares the analytic gradient of `f` at `x` against central
/// differences `(f(x+ε) − f(x−ε)) / 2ε`, coordinate by coordinate.
/// `x` is restored bitwise before returning.
pub fn finite_difference_check<F>(
    x: &mut [f64],
    analytic: &[f64],
    mut f: F,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradientCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if x.len() != analytic.len() {
        return Err(Error::ShapeMismatch(format!(
            "analytic gradient has {} entries for {} coordinates",
            analytic.len(),
            x.len()
        )));
    }

    let mut report = GradientCheckReport {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        worst_index: 0,
        passed: true,
    };
    for i in 0..x.len() {
        let saved = x[i];
        x[i] = saved + epsilon;
        let plus = f(x);
        x[i] = saved - epsilon;
        let minus = f(x);
        x[i] = saved;
        let fd = (plus - minus) / (2.0 * epsilon);
        let abs = (fd - analytic[i]).abs();
        let rel = abs / fd.abs().max(analytic[i].abs()).max(REL_DENOM_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    report.passed = report.max_rel_error <= tolerance;
    Ok(report)
}
