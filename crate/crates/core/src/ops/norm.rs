//! Batch normalization with externally supplied running statistics, so a
//! caller can swap the statistics object per domain while sharing scale
//! and shift.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variance stabilizer added in every division.
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Per-channel running mean and (biased) variance.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStatistics {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl NormStatistics {
    pub fn new(channels: usize) -> Self {
        NormStatistics {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Everything the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    mode: Mode,
    shape: [usize; 4],
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    scale: Vec<f64>,
}

/// Train mode normalizes by batch statistics and folds them into the
/// running statistics with the given momentum
/// (`running ← (1 − momentum)·running + momentum·batch`); inference mode
/// normalizes by the stored running statistics.
pub fn batch_normalize(
    input: &Tensor,
    stats: &mut NormStatistics,
    scale: &[f64],
    shift: &[f64],
    mode: Mode,
    momentum: f64,
) -> Result<(Tensor, BnCache)> {
    let [n, c, h, w] = input.shape();
    if stats.channels() != c {
        return Err(Error::ShapeMismatch(format!(
            "statistics cover {} channels, input has {c}",
            stats.channels()
        )));
    }
    if scale.len() != c || shift.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "scale/shift must have {c} entries, got {}/{}",
            scale.len(),
            shift.len()
        )));
    }
    if !(0.0..1.0).contains(&momentum) || momentum == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "momentum must lie in (0, 1), got {momentum}"
        )));
    }

    let m = (n * h * w) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    match mode {
        Mode::Train => {
            for b in 0..n {
                for ch in 0..c {
                    mean[ch] += input.plane(b, ch).iter().sum::<f64>();
                }
            }
            for v in mean.iter_mut() {
                *v /= m;
            }
            for b in 0..n {
                for ch in 0..c {
                    var[ch] += input
                        .plane(b, ch)
                        .iter()
                        .map(|x| (x - mean[ch]) * (x - mean[ch]))
                        .sum::<f64>();
                }
            }
            for v in var.iter_mut() {
                *v /= m;
            }
            for ch in 0..c {
                stats.mean[ch] = (1.0 - momentum) * stats.mean[ch] + momentum * mean[ch];
                stats.var[ch] = (1.0 - momentum) * stats.var[ch] + momentum * var[ch];
            }
        }
        Mode::Inference => {
            for (ch, v) in stats.var.iter().enumerate() {
                if *v <= 0.0 {
                    return Err(Error::CorruptStatistics(format!(
                        "running variance of channel {ch} is {v}"
                    )));
                }
            }
            mean.copy_from_slice(&stats.mean);
            var.copy_from_slice(&stats.var);
        }
    }

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut out = Tensor::zeros([n, c, h, w]);
    let mut xhat = vec![0.0; input.len()];
    for b in 0..n {
        for ch in 0..c {
            let xp = input.plane(b, ch);
            let base = (b * c + ch) * h * w;
            let op = out.plane_mut(b, ch);
            for (i, x) in xp.iter().enumerate() {
                let xh = (x - mean[ch]) * inv_std[ch];
                xhat[base + i] = xh;
                op[i] = scale[ch] * xh + shift[ch];
            }
        }
    }
    let cache = BnCache {
        mode,
        shape: [n, c, h, w],
        xhat,
        inv_std,
        scale: scale.to_vec(),
    };
    Ok((out, cache))
}

/// Adjoints with respect to input, scale, and shift.
pub fn batch_normalize_backward(
    cache: &BnCache,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let [n, c, h, w] = cache.shape;
    if grad_out.shape() != cache.shape {
        return Err(Error::ShapeMismatch(format!(
            "grad_out shape {:?} does not match forward shape {:?}",
            grad_out.shape(),
            cache.shape
        )));
    }
    let m = (n * h * w) as f64;
    let hw = h * w;
    let mut gscale = vec![0.0; c];
    let mut gshift = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let gp = grad_out.plane(b, ch);
            let base = (b * c + ch) * hw;
            for (i, g) in gp.iter().enumerate() {
                gscale[ch] += g * cache.xhat[base + i];
                gshift[ch] += g;
            }
        }
    }

    let mut gin = Tensor::zeros(cache.shape);
    for b in 0..n {
        for ch in 0..c {
            let gp = grad_out.plane(b, ch);
            let base = (b * c + ch) * hw;
            let gi = gin.plane_mut(b, ch);
            match cache.mode {
                Mode::Train => {
                    let mean_g = gshift[ch] / m;
                    let mean_gx = gscale[ch] / m;
                    for (i, g) in gp.iter().enumerate() {
                        let xh = cache.xhat[base + i];
                        gi[i] = cache.scale[ch]
                            * cache.inv_std[ch]
                            * (g - mean_g - xh * mean_gx);
                    }
                }
                Mode::Inference => {
                    for (i, g) in gp.iter().enumerate() {
                        gi[i] = cache.scale[ch] * cache.inv_std[ch] * g;
                    }
                }
            }
        }
    }
    Ok((gin, gscale, gshift))
}
