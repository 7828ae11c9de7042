use crate::error::{Error, Result};

/// One Nesterov accelerated gradient update with weight decay folded into
/// the gradient:
///   g ← grad + weight_decay·param
///   v ← momentum·v − lr·lr_multiplier·g
///   param ← param + momentum·v − lr·lr_multiplier·g
///
/// A zero `lr_multiplier` means the parameter is frozen: both the
/// parameter and its velocity stay bitwise unchanged.
pub fn nag_step(
    param: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    lr_multiplier: f64,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(Error::ShapeMismatch(format!(
            "param/grad/velocity lengths {}/{}/{} disagree",
            param.len(),
            grad.len(),
            velocity.len()
        )));
    }
    if lr_multiplier == 0.0 {
        return Ok(());
    }
    let step = lr * lr_multiplier;
    for i in 0..param.len() {
        let g = grad[i] + weight_decay * param[i];
        velocity[i] = momentum * velocity[i] - step * g;
        param[i] += momentum * velocity[i] - step * g;
    }
    Ok(())
}
