//! One optimization step: per-domain forward and backward passes with
//! the hybrid loss weighting folded into the head gradients, then a
//! single Nesterov update over the shared parameters.

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::ops::loss::softmax_cross_entropy;
use crate::ops::norm::Mode;
use crate::tensor::Tensor;
use crate::train::bank::DomainNormBank;
use crate::train::hlw::{hlw_total_loss, LossWeights};
use crate::train::net::ToyNet;
use crate::train::optim::nag_step;
use crate::train::schedule::{poly_lr, Schedule};

#[derive(Debug, Clone)]
pub struct StepLosses {
    /// Unweighted per-domain main losses, index = domain.
    pub main: Vec<f64>,
    /// Unweighted per-domain auxiliary losses.
    pub aux: Vec<f64>,
    /// Weighted total actually optimized.
    pub total: f64,
    pub lr: f64,
}

fn scale_in_place(tensor: &mut Tensor, factor: f64) {
    for v in tensor.data_mut() {
        *v *= factor;
    }
}

/// Runs one training iteration over one batch per domain
/// (`batches[d]` feeds domain `d`) and applies a single optimizer step.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    net: &mut ToyNet,
    bank: &mut DomainNormBank,
    batches: &[(Tensor, LabelMap)],
    weights: &LossWeights,
    schedule: &Schedule,
    iter: usize,
    loss_scale: f64,
    void_class: u8,
) -> Result<StepLosses> {
    if batches.len() != net.config.domains || batches.len() != weights.k + 1 {
        return Err(Error::InvalidArgument(format!(
            "got {} domain batches for a {}-domain network with K = {}",
            batches.len(),
            net.config.domains,
            weights.k
        )));
    }
    weights.validate()?;
    schedule.validate()?;

    net.zero_grads();
    let mut main_losses = Vec::with_capacity(batches.len());
    let mut aux_losses = Vec::with_capacity(batches.len());
    for (domain, (input, labels)) in batches.iter().enumerate() {
        let (main_logits, aux_logits) =
            net.domain_forward(input, domain, bank, Mode::Train)?;
        let (lmain, mut gmain) =
            softmax_cross_entropy(&main_logits, labels, void_class, loss_scale)?;
        let (laux, mut gaux) =
            softmax_cross_entropy(&aux_logits, labels, void_class, loss_scale)?;
        scale_in_place(&mut gmain, weights.main_coefficient(domain));
        scale_in_place(&mut gaux, weights.aux_coefficient(domain));
        net.backward(&gmain, &gaux)?;
        main_losses.push(lmain);
        aux_losses.push(laux);
    }
    let total = hlw_total_loss(&main_losses, &aux_losses, weights)?;

    let lr = poly_lr(iter, schedule);
    let frozen = schedule.offsets_frozen(iter);
    for param in net.params_mut() {
        let multiplier = if param.kind.is_offset() {
            if frozen {
                0.0
            } else {
                schedule.offset_lr_multiplier
            }
        } else {
            1.0
        };
        let decay = if param.kind.decays() {
            schedule.weight_decay
        } else {
            0.0
        };
        nag_step(
            param.value.data_mut(),
            &param.grad,
            &mut param.velocity,
            lr,
            schedule.momentum,
            decay,
            multiplier,
        )?;
    }
    Ok(StepLosses {
        main: main_losses,
        aux: aux_losses,
        total,
        lr,
    })
}
