use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise max(0, x). The subgradient at exactly 0 is taken as 0.
pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|x| x.max(0.0)).collect();
    Tensor::from_vec(input.shape(), data).unwrap()
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch(format!(
            "relu grad shape {:?} vs input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}
