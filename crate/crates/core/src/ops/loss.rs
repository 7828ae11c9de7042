//! Pixelwise softmax cross-entropy with an ignored class and a loss
//! scale factor, returning the loss together with the logits gradient.

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::Tensor;

pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &LabelMap,
    ignore_class: u8,
    loss_scale: f64,
) -> Result<(f64, Tensor)> {
    let [n, c, h, w] = logits.shape();
    if labels.batch != n || labels.height != h || labels.width != w {
        return Err(Error::ShapeMismatch(format!(
            "labels {}x{}x{} do not match logits {:?}",
            labels.batch, labels.height, labels.width,
            logits.shape()
        )));
    }
    for &l in &labels.data {
        if l != ignore_class && (l as usize) >= c {
            return Err(Error::InvalidArgument(format!(
                "label value {l} exceeds class count {c}"
            )));
        }
    }

    let count = labels
        .data
        .iter()
        .filter(|l| **l != ignore_class)
        .count();
    let mut grad = Tensor::zeros(logits.shape());
    if count == 0 {
        return Ok((0.0, grad));
    }

    let mut loss = 0.0;
    let scale = loss_scale / count as f64;
    let mut probs = vec![0.0; c];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let label = labels.at(b, y, x);
                if label == ignore_class {
                    continue;
                }
                let mut max = f64::NEG_INFINITY;
                for ch in 0..c {
                    max = max.max(logits.at(b, ch, y, x));
                }
                let mut denom = 0.0;
                for (ch, p) in probs.iter_mut().enumerate() {
                    *p = (logits.at(b, ch, y, x) - max).exp();
                    denom += *p;
                }
                for p in probs.iter_mut() {
                    *p /= denom;
                }
                loss -= probs[label as usize].ln();
                for (ch, p) in probs.iter().enumerate() {
                    let one_hot = if ch == label as usize { 1.0 } else { 0.0 };
                    grad.set(b, ch, y, x, scale * (p - one_hot));
                }
            }
        }
    }
    Ok((loss_scale * loss / count as f64, grad))
}
